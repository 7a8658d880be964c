fn main() {
    std::process::exit(skefi::cli::run(std::env::args_os()));
}
