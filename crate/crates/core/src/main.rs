fn main() {
    std::process::exit(zabcheck::cli::run(std::env::args_os()));
}
