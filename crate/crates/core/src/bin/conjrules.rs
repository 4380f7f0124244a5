fn main() {
    std::process::exit(conjrules::cli::main_with_args(std::env::args_os()));
}
