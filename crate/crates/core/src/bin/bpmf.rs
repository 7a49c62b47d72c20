fn main() {
    std::process::exit(bpmf::cli::main_with_args(std::env::args_os()));
}
