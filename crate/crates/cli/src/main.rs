fn main() {
    std::process::exit(tinyt5_cli::run_from_args(std::env::args_os()));
}
