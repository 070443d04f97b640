fn main() {
    std::process::exit(cwt::cli::run(std::env::args_os()));
}
