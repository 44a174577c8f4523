fn main() {
    std::process::exit(msunmix_cli::run(std::env::args_os()));
}
