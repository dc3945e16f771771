fn main() {
    std::process::exit(qopers::cli::main_with_args(std::env::args_os()));
}
