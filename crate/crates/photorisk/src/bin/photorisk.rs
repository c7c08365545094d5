fn main() {
    std::process::exit(photorisk::cli::main());
}
