fn main() {
    std::process::exit(dga::cli::run(std::env::args_os()));
}
