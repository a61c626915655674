fn main() -> std::process::ExitCode {
    warpflow::cli_runner::main_with_args(std::env::args_os())
}
