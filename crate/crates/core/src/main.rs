fn main() {
    std::process::exit(sysforecast::cli::run(std::env::args_os()));
}
