fn main() {
    std::process::exit(structreward_cli::dispatch(std::env::args_os()));
}
