fn main() {
    std::process::exit(radunc_harness::cli::run(std::env::args_os()));
}
