fn main() {
    std::process::exit(excursion_lab::cli::run());
}
