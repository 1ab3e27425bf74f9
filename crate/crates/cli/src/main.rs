fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(kspec_cli::run(&args));
}
