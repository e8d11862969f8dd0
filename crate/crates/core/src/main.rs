fn main() {
    std::process::exit(synthfreeze::cli::run(std::env::args_os()));
}
