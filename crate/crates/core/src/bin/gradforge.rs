fn main() {
    std::process::exit(gradforge::cli::run(std::env::args_os()));
}
