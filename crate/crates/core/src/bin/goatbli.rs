fn main() {
    std::process::exit(goatbli::cli::run(std::env::args_os()));
}
