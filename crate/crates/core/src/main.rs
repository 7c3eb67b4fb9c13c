fn main() {
    std::process::exit(memslice::cli::main_with_args(std::env::args_os()));
}
