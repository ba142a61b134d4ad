fn main() {
    std::process::exit(m3::cli::run());
}
