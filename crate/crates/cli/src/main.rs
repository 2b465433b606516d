fn main() {
    std::process::exit(looprl_cli::run(std::env::args_os()));
}
