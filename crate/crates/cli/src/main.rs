fn main() {
    std::process::exit(reviewgraph_cli::run(std::env::args_os()));
}
