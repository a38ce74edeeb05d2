fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("POLECRAFT_LOG"))
        .format_timestamp(None)
        .init();
    std::process::exit(polecraft::cli::run(std::env::args_os()));
}
