fn main() {
    std::process::exit(knowcol::cli::run(std::env::args_os()));
}
