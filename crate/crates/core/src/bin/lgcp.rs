fn main() -> std::process::ExitCode {
    lgcp::cli::main_entry()
}
