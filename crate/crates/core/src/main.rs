fn main() {
    std::process::exit(sslnet::cli::main_with_args(std::env::args_os()));
}
