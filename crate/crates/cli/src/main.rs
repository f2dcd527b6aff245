fn main() {
    std::process::exit(chae_cli::run(std::env::args_os()));
}
