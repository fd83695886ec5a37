fn main() {
    std::process::exit(ctmdp::cli::run(std::env::args_os()));
}
