fn main() {
    std::process::exit(upmi::cli::main_entry());
}
