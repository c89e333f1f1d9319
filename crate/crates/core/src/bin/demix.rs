fn main() {
    std::process::exit(demix::cli::main_with_args(std::env::args_os()));
}
