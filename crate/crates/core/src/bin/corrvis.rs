fn main() {
    std::process::exit(corrvis::cli::run(std::env::args_os()));
}
