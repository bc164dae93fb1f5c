fn main() {
    std::process::exit(beamtrack::cli::run_command(std::env::args_os()));
}
