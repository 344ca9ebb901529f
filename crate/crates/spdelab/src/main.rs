fn main() {
    std::process::exit(spdelab::cli::main_entry());
}
