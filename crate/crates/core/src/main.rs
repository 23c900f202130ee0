use clap::Parser;

fn main() {
    let cli = caad::cli::Cli::parse();
    let code = caad::cli::run(cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
