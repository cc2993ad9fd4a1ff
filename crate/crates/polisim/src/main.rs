fn main() {
    std::process::exit(polisim::cli::run());
}
