fn main() {
    std::process::exit(eacg::harness::cli(std::env::args_os()));
}
