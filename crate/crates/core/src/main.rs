fn main() {
    std::process::exit(lsdc::cli::run(std::env::args_os()));
}
