fn main() {
    std::process::exit(onsigma::runner::cli::main_with_args(std::env::args_os()));
}
