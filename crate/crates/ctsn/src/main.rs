fn main() {
    std::process::exit(ctsn::cli::run(std::env::args_os()));
}
