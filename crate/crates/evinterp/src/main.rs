fn main() -> std::process::ExitCode {
    evinterp::cli::main_entry()
}
