fn main() {
    let code = ivlm::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
