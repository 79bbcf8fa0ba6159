fn main() {
    std::process::exit(ast_hslw::cli::main_with_args(std::env::args_os()));
}
