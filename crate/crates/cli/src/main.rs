fn main() {
    std::process::exit(bottomup_cli::run(std::env::args_os()));
}
