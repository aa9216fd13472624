fn main() {
    std::process::exit(crystal_surface::cli::run_command(std::env::args_os()));
}
