fn main() {
    std::process::exit(scarcegan::cli::run(std::env::args_os()));
}
