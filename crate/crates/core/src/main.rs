fn main() {
    std::process::exit(stratcomm::cli::main_with_args(std::env::args_os()));
}
