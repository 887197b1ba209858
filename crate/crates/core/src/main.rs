fn main() {
    std::process::exit(cmcm::cli::main());
}
