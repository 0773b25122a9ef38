fn main() {
    std::process::exit(filippov_lab::cli::run(std::env::args().collect()));
}
