fn main() -> std::process::ExitCode {
    exforge::cli::main()
}
