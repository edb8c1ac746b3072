fn main() {
    std::process::exit(rrl::cli::main_with_args(std::env::args_os()));
}
