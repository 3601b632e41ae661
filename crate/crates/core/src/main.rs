fn main() {
    let code = force_effect::cli::main_with_args(std::env::args_os().collect());
    std::process::exit(code);
}
