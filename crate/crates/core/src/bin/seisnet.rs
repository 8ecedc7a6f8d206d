fn main() -> std::process::ExitCode {
    seisnet::cli::main()
}
