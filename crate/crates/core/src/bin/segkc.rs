fn main() {
    std::process::exit(segkc::cli::main_with_args(std::env::args_os()));
}
