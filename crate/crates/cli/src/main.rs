fn main() {
    std::process::exit(smrmom_cli::run(std::env::args_os()));
}
