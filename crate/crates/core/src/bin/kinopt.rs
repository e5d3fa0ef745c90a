fn main() {
    std::process::exit(kinopt::cli::main_with_args(std::env::args_os()));
}
