fn main() {
    std::process::exit(qssim::cli::run(std::env::args_os()));
}
