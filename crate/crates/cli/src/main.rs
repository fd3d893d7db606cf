fn main() {
    std::process::exit(tcrnn_cli::run_from_args(std::env::args_os()));
}
