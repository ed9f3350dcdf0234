fn main() {
    std::process::exit(pyrdg_cli::main_with_args(std::env::args_os()));
}
