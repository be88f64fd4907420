fn main() {
    std::process::exit(hyperhier_cli::run_cli(std::env::args_os()));
}
