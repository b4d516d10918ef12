fn main() {
    std::process::exit(enet::cli::main());
}
