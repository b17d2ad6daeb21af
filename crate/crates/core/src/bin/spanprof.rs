fn main() {
    std::process::exit(spanprof::cli::main_with_args(std::env::args_os()));
}
