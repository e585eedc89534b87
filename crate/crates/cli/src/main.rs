fn main() {
    std::process::exit(tppa_cli::run(std::env::args_os()));
}
