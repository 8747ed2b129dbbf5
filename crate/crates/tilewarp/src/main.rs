fn main() {
    std::process::exit(tilewarp::run(std::env::args_os()));
}
