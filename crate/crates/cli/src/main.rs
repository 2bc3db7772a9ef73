fn main() {
    std::process::exit(cadorder_cli::run(std::env::args_os()));
}
