fn main() {
    std::process::exit(treefair::cli::run(std::env::args_os()));
}
