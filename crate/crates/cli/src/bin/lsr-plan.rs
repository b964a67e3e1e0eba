fn main() -> std::process::ExitCode {
    lsr_cli::main_for(Some("plan"))
}
