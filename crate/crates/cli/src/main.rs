fn main() {
    std::process::exit(gaqn_cli::run(std::env::args_os()));
}
