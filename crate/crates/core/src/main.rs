fn main() {
    std::process::exit(barrier_solver::cli::run(std::env::args_os()));
}
