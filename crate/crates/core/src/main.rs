fn main() {
    std::process::exit(captalk::cli::main_with_args(std::env::args_os()));
}
