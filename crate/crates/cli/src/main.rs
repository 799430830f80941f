fn main() {
    std::process::exit(cnm_cli::run(std::env::args_os()));
}
