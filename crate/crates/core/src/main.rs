fn main() {
    std::process::exit(kpca_ood::cli::run(std::env::args_os()));
}
