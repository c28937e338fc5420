fn main() {
    std::process::exit(hclt_cli::run());
}
