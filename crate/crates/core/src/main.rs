fn main() {
    std::process::exit(bvs_core::cli::main_with_args(std::env::args_os()));
}
