fn main() {
    std::process::exit(mcdd_cli::run_cli(std::env::args_os()));
}
