fn main() {
    std::process::exit(qvar::cli::run_command(std::env::args_os()));
}
