fn main() {
    std::process::exit(dlvkl::cli::run(std::env::args_os()));
}
