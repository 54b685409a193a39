use clap::Parser;

fn main() {
    let cli = sgnn_bench::Cli::parse();
    if let Err(f) = sgnn_bench::run(&cli) {
        eprintln!("error: {}", f.msg);
        std::process::exit(f.code);
    }
}
