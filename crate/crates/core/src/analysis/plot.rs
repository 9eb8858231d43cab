//! Minimal SVG renderings of the PCA scatter and the scaling-law fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::bnsl::{bnsl_eval, BnslFit};
use super::pca::Pca;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn extent(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Datasets on the first two components, coloured by `domains[name]` when given.
pub fn pca_scatter_svg(names: &[String], pca: &Pca, domains: &BTreeMap<String, String>) -> String {
    let (w, h, m) = (640.0, 480.0, 50.0);
    let pt = |i: usize, c: usize| pca.projections[i].get(c).copied().unwrap_or(0.0);
    let (x0, x1) = extent((0..names.len()).map(|i| pt(i, 0)));
    let (y0, y1) = extent((0..names.len()).map(|i| pt(i, 1)));
    let sx = |v: f64| m + (w - 2.0 * m) * (v - x0) / (x1 - x0);
    let sy = |v: f64| h - m - (h - 2.0 * m) * (v - y0) / (y1 - y0);
    let mut domain_ids: Vec<&String> = domains.values().collect();
    domain_ids.sort();
    domain_ids.dedup();
    let mut svg = String::new();
    let _ = writeln!(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">");
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let ratio = |c: usize| pca.explained_ratio.get(c).copied().unwrap_or(0.0) * 100.0;
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">PC1 ({:.1}%)</text>",
        w / 2.0,
        h - 10.0,
        ratio(0)
    );
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">PC2 ({:.1}%)</text>",
        h / 2.0,
        h / 2.0,
        ratio(1)
    );
    for (i, name) in names.iter().enumerate() {
        let color = domains
            .get(name)
            .and_then(|d| domain_ids.iter().position(|x| *x == d))
            .map_or("#000000", |k| PALETTE[k % PALETTE.len()]);
        let (x, y) = (sx(pt(i, 0)), sy(pt(i, 1)));
        let _ = writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"{color}\"/>");
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            x + 7.0,
            y - 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Observed points (train / val / test shaded differently) and the fitted
/// curve on a log-scaled x axis.
pub fn bnsl_fit_svg(xs: &[f64], ys: &[f64], fit: &BnslFit) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let curve: Vec<(f64, f64)> = (0..=200)
        .filter_map(|k| {
            let l = lx[0] + (lx[lx.len() - 1] - lx[0]) * k as f64 / 200.0;
            bnsl_eval(&fit.params, 10f64.powf(l)).ok().filter(|v| v.is_finite()).map(|v| (l, v))
        })
        .collect();
    let (x0, x1) = extent(lx.iter().copied());
    let (y0, y1) = extent(ys.iter().copied().chain(curve.iter().map(|c| c.1)));
    let sx = |v: f64| m + (w - 2.0 * m) * (v - x0) / (x1 - x0);
    let sy = |v: f64| h - m - (h - 2.0 * m) * (v - y0) / (y1 - y0);
    let mut svg = String::new();
    let _ = writeln!(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">");
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for (i, (&l, &y)) in lx.iter().zip(ys).enumerate() {
        let color = if i < fit.train_end {
            "#1f77b4"
        } else if i < fit.val_end {
            "#ff7f0e"
        } else {
            "#2ca02c"
        };
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", sx(l), sy(y));
    }
    let pts: Vec<String> = curve.iter().map(|&(l, v)| format!("{:.2},{:.2}", sx(l), sy(v))).collect();
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"{}\"/>",
        pts.join(" ")
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 x</text>",
        w / 2.0,
        h - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}
