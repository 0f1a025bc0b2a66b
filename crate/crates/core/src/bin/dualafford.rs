fn main() {
    std::process::exit(dualafford::harness::cli::main_with(std::env::args_os()));
}
