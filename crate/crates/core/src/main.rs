fn main() {
    std::process::exit(hazecycle::cli::run(std::env::args_os()));
}
