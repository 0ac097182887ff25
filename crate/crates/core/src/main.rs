fn main() {
    std::process::exit(thc::cli::run(std::env::args_os()));
}
