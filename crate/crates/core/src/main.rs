use std::process::ExitCode;

fn main() -> ExitCode {
    cfsched::cli::main_entry()
}
