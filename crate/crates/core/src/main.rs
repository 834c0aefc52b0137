fn main() {
    std::process::exit(fisherflow::cli::run(std::env::args_os()));
}
