fn main() {
    std::process::exit(distgen_core::cli::run());
}
