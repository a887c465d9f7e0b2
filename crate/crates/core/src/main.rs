fn main() -> std::process::ExitCode {
    sfod::cli::main()
}
