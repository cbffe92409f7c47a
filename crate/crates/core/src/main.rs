fn main() -> std::process::ExitCode {
    papg::cli::main()
}
