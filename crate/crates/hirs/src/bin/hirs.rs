fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match hirs::cli::run(&args) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(2);
        }
    }
}
