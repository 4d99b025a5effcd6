fn main() -> std::process::ExitCode {
    revdeq::cli::main()
}
