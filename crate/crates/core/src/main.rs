fn main() {
    std::process::exit(mctm::cli::main_with_args(std::env::args_os()));
}
