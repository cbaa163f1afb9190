fn main() {
    std::process::exit(etank::cli::main_with_args(std::env::args_os()));
}
