fn main() {
    std::process::exit(aenet_cli::run(std::env::args_os()));
}
