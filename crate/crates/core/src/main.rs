fn main() {
    std::process::exit(rd_lens::cli::run(std::env::args().skip(1)));
}
