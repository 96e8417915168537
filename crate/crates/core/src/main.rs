fn main() {
    std::process::exit(greenfuzz::cli::main_with_args(std::env::args_os()));
}
