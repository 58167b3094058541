fn main() {
    std::process::exit(massflow::cli::run(std::env::args_os()));
}
