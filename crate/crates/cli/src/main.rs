fn main() {
    std::process::exit(drivernet_cli::run(std::env::args_os()));
}
