fn main() -> std::process::ExitCode {
    qualitynet::cli::main_entry()
}
