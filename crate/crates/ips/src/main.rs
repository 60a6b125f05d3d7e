fn main() {
    std::process::exit(ips::cli::run(std::env::args_os()));
}
