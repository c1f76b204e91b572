fn main() {
    std::process::exit(batchsim::cli::run(std::env::args_os()));
}
