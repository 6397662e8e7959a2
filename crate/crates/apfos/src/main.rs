fn main() {
    std::process::exit(apfos::runner::cli_main());
}
