fn main() {
    std::process::exit(stfbc_core::cli::main_with_args(std::env::args_os()));
}
