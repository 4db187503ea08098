fn main() {
    std::process::exit(seqprune::cli::run(std::env::args_os()));
}
