fn main() {
    if let Err(e) = protoskill::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
