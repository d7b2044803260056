fn main() {
    std::process::exit(polarscan::cli::run(std::env::args_os()));
}
