fn main() {
    std::process::exit(painfuse::cli::dispatch(std::env::args_os()));
}
