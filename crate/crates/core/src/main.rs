fn main() {
    std::process::exit(gnnrec::cli::main_entry());
}
