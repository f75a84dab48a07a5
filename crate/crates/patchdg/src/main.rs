fn main() {
    std::process::exit(patchdg::cli::run());
}
