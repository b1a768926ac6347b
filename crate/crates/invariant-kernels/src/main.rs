fn main() {
    std::process::exit(invariant_kernels::cli::run(std::env::args_os()));
}
