fn main() {
    std::process::exit(promptalign_cli::dispatch(std::env::args_os()));
}
