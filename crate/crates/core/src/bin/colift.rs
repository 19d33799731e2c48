fn main() {
    colift::cli::init_logging();
    std::process::exit(colift::cli::main_with_args(std::env::args_os()));
}
