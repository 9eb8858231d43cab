//! Pretrains a small model on the bundled synthetic corpus and prints the
//! per-epoch losses. An optional second argument saves the best checkpoint.

use laglm::data::synthetic::pretraining_corpus;
use laglm::featurize::LagSet;
use laglm::model::ModelConfig;
use laglm::train::{pretrain, TrainConfig};

fn main() -> laglm::Result<()> {
    env_logger::init();
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let datasets = pretraining_corpus(0)
        .iter()
        .map(|s| s.generate())
        .collect::<laglm::Result<Vec<_>>>()?;
    let model = ModelConfig {
        n_layers: 2,
        n_heads: 4,
        dim_per_head: 8,
        context_length: 32,
        lag_set: LagSet::default_for_corpus(),
        ..ModelConfig::table4_optimal()
    };
    let train = TrainConfig {
        batch_size: 25,
        learning_rate: 1e-3,
        max_epochs: epochs,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut out = std::io::stdout();
    let outcome = pretrain(&model, &datasets, &train, Some(&mut out))?;
    if let Some(path) = std::env::args().nth(2) {
        outcome.checkpoint.save(std::path::Path::new(&path))?;
    }
    println!(
        "best epoch {} val {:?}",
        outcome.checkpoint.training.best_epoch, outcome.checkpoint.training.best_val_loss
    );
    Ok(())
}
