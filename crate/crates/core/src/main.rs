fn main() {
    std::process::exit(kws::cli::run(std::env::args_os()));
}
