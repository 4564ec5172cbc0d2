fn main() -> std::process::ExitCode {
    comocma::cli::main()
}
