fn main() {
    std::process::exit(aniso_surf_cli::main_with(std::env::args_os()));
}
