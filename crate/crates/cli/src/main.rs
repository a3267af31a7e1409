fn main() {
    std::process::exit(posefield_cli::run(std::env::args_os()));
}
