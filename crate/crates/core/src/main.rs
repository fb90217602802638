fn main() {
    std::process::exit(sdid::cli::run(std::env::args_os()));
}
