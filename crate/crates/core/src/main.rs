fn main() {
    std::process::exit(it2::cli::run(std::env::args_os()));
}
