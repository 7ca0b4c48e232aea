use clap::Parser;

/// Joins the error chain, skipping causes already embedded in an outer
/// message so nothing prints twice.
fn render_chain(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.is_empty() {
            out = text;
        } else if !out.ends_with(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KVLU_LOG", "warn")).init();
    let cli = kvlu_cli::Cli::parse();
    if let Err(err) = kvlu_cli::run(cli) {
        eprintln!("error: {}", render_chain(&err));
        std::process::exit(1);
    }
}
