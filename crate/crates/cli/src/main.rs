fn main() -> std::process::ExitCode {
    carbseg_cli::run()
}
