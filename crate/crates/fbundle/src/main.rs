fn main() {
    std::process::exit(fbundle::cli::main_with_args(std::env::args_os()));
}
