fn main() {
    std::process::exit(ipd::cli::run());
}
