fn main() {
    std::process::exit(entangle_ot::cli::run(std::env::args_os()));
}
