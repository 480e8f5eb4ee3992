use std::process::ExitCode;

fn main() -> ExitCode {
    metareason::cli::main()
}
