fn main() {
    std::process::exit(duet_rec::cli_main());
}
