fn main() {
    let code = sleuth::cli::run(std::env::args_os());
    std::process::exit(code);
}
