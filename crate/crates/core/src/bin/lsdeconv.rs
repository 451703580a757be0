fn main() {
    std::process::exit(lsdeconv::cli::run_from_args(std::env::args_os()));
}
