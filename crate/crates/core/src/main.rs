fn main() {
    std::process::exit(smc_core::cli::main_with_args(std::env::args_os()));
}
