fn main() {
    std::process::exit(imitsim::cli::run_from(std::env::args_os()));
}
