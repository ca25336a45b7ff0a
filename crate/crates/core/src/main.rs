use std::process::ExitCode;

use disque::cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let parsed = match cli::parse(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = disque::Error::Config(cli::first_line(&e.to_string()));
            return report(&err);
        }
    };
    match cli::execute(parsed, args[1..].to_vec(), None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

/// One machine-parsable line on stderr, then the class's exit code.
fn report(err: &disque::Error) -> ExitCode {
    let class = err.class();
    let msg = err.to_string().replace(['\n', '\r'], " ");
    eprintln!("error class={} code={} msg={msg}", class.as_str(), class.exit_code());
    ExitCode::from(class.exit_code() as u8)
}
