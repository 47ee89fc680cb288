use std::io::{self, BufReader};

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let code = mindos_service::cli::run(
        std::env::args_os(),
        |key| std::env::var(key).ok(),
        &mut input,
        &mut io::stdout(),
        &mut io::stderr(),
    );
    std::process::exit(code);
}
