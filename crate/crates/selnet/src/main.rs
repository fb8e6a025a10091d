fn main() {
    std::process::exit(selnet::cli::run(std::env::args_os()));
}
