fn main() {
    std::process::exit(gexp::cli::run(std::env::args_os()));
}
