//! Command-line front end for the magnetic-flow laboratory.

fn main() {
    eprintln!("magflow: command set under construction");
    std::process::exit(2);
}
