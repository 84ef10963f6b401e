fn main() {
    let code = impulse_lab::run_command(std::env::args_os(), &mut std::io::stderr());
    std::process::exit(code);
}
