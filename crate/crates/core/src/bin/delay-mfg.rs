fn main() {
    std::process::exit(delay_mfg::cli::main_with(std::env::args_os()));
}
