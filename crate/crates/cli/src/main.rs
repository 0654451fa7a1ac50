fn main() {
    std::process::exit(sgnms_cli::run(std::env::args_os()));
}
