fn main() {
    std::process::exit(m2d_cli::run(std::env::args_os()));
}
