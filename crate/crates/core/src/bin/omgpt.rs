fn main() {
    std::process::exit(omgpt::cli::run(std::env::args_os()));
}
