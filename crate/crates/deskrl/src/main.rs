fn main() {
    std::process::exit(deskrl::cli::run(std::env::args_os()));
}
