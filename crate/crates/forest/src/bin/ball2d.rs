use forest_amr::cli::{cli_main, Mode};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(cli_main(Mode::Ball2d, &args));
}
