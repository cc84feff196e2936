fn main() {
    std::process::exit(msr_cli::cli::run(std::env::args_os()));
}
