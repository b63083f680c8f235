fn main() {
    std::process::exit(seqcf::cli::main());
}
