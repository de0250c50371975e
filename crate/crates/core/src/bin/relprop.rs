fn main() {
    relprop::cli::init_logging();
    std::process::exit(relprop::cli::main_with_args(std::env::args_os()));
}
