fn main() {
    std::process::exit(onm_field::cli::main());
}
