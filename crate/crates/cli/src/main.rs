fn main() {
    if let Err(e) = mefsfi_cli::run(std::env::args_os()) {
        eprintln!("error: {}", e.message.trim_end());
        std::process::exit(e.code);
    }
}
