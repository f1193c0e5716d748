fn main() {
    std::process::exit(middo::cli::run());
}
