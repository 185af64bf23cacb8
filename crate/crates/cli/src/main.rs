fn main() {
    std::process::exit(submfg_cli::main_with_args(std::env::args_os()));
}
