fn main() {
    std::process::exit(clinnote_cli::run(std::env::args_os()));
}
