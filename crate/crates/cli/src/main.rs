fn main() {
    std::process::exit(polyseg_cli::run_command(std::env::args()));
}
