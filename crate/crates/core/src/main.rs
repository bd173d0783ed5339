fn main() {
    std::process::exit(idhnet::cli::run(std::env::args_os()));
}
