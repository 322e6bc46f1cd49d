fn main() {
    std::process::exit(idqn::cli::run(std::env::args().collect()));
}
