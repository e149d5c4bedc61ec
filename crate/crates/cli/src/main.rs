fn main() {
    std::process::exit(nio_cli::run(std::env::args_os()));
}
