fn main() {
    std::process::exit(ambiloc::cli::run(std::env::args_os()));
}
