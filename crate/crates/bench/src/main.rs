fn main() {
    std::process::exit(sparqlcache_bench::cli::run(std::env::args_os()));
}
