fn main() {
    std::process::exit(volrig::cli::run(std::env::args_os()));
}
