fn main() {
    std::process::exit(dlgm::cli::run(std::env::args_os()));
}
