fn main() {
    std::process::exit(phg::cli::main_with_args(std::env::args_os()));
}
