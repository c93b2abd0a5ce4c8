fn main() {
    std::process::exit(npa3d::cli::main());
}
