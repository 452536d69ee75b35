fn main() {
    std::process::exit(foresearch_service::cli::main_with_args(std::env::args_os()));
}
