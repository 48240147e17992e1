fn main() {
    std::process::exit(swae::cli::main());
}
