//! Runs a scenario file (default: the bundled registration flow) and prints
//! its message trace. Pass a path to run another one.

use issee::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/scenarios/registration.scn").to_string()
    });
    let sc = Scenario::load(&path)?;
    println!("{}: seed {}, {} steps", sc.name, sc.seed, sc.steps.len());
    match sc.run() {
        Ok(run) => {
            print!("{}", run.trace_text());
            println!("all expectations held");
        }
        Err((e, run)) => {
            print!("{}", run.trace_text());
            println!("{e}");
            std::process::exit(1);
        }
    }
    Ok(())
}
