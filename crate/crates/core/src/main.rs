fn main() {
    std::process::exit(rutfield::cli::run(std::env::args_os()));
}
