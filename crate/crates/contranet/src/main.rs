fn main() {
    std::process::exit(contranet::cli::run());
}
