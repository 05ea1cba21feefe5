use std::process::ExitCode;

fn main() -> ExitCode {
    let spec = match zprune::cli::parse_args(std::env::args_os()) {
        Ok(spec) => spec,
        Err(e) => e.exit(),
    };
    ExitCode::from(zprune::cli::run(&spec) as u8)
}
