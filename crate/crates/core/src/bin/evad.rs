fn main() {
    env_logger::init();
    std::process::exit(evad::cli::cli_main(std::env::args_os()));
}
