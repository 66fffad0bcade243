fn main() {
    std::process::exit(qgr_core::cli::main_with_args(std::env::args_os()));
}
