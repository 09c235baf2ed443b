fn main() {
    std::process::exit(nphoton_cli::cli_main(std::env::args().collect()));
}
