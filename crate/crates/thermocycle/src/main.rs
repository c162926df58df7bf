fn main() {
    std::process::exit(thermocycle::cli::main_with_args(std::env::args_os()));
}
