fn main() {
    std::process::exit(linbai::cli::dispatch(std::env::args_os()));
}
