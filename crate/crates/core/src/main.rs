fn main() -> std::process::ExitCode {
    ugcl::cli::main()
}
