fn main() { std::process::exit(mgstab_cli::run_command(std::env::args().collect())) }
