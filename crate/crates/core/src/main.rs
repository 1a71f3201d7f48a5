fn main() {
    std::process::exit(hopf_shear::cli::run(std::env::args_os()));
}
