fn main() {
    std::process::exit(laglm_cli::run(std::env::args_os()));
}
