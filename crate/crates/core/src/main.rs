fn main() {
    std::process::exit(annbench::cli::main_with_args(std::env::args_os()));
}
