fn main() {
    std::process::exit(acs_core::cli::run_cli(std::env::args_os()));
}
