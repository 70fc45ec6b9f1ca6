fn main() {
    std::process::exit(sketchyggn_cli::run_command(std::env::args_os()));
}
