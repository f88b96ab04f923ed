fn main() {
    std::process::exit(reid_core::cli::main());
}
