fn main() {
    std::process::exit(bench_validity::cli::main());
}
