fn main() {
    std::process::exit(condcov::cli::cli_main(std::env::args_os()));
}
