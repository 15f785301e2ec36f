fn main() {
    std::process::exit(tidesim::cli::main());
}
