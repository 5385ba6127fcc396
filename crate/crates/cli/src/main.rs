fn main() {
    std::process::exit(tomprobe_cli::run(std::env::args_os()));
}
