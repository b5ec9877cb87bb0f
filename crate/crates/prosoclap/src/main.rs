fn main() {
    std::process::exit(prosoclap::cli::run());
}
