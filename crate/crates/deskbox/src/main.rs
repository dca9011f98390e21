fn main() {
    std::process::exit(deskbox::cli::main_with(std::env::args_os()));
}
