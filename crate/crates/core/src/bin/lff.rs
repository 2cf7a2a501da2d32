fn main() {
    std::process::exit(lff::cli::run(std::env::args_os()));
}
