fn main() {
    std::process::exit(laclip_core::cli::run(std::env::args_os()));
}
