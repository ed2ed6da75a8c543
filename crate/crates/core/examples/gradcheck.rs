//! Central finite differences against the reverse-mode gradients for every
//! loss term and both stage objectives on a seeded toy problem.

use okb_canon::pipeline::gradcheck_suite;

fn main() -> okb_canon::Result<()> {
    let (results, k) = gradcheck_suite(0, 1e-5)?;
    println!("toy problem with {k} preliminary clusters");
    println!("{:<15}{:>12}{:>12}{:>8}", "objective", "rel error", "max |g|", "params");
    for r in results {
        println!("{:<15}{:>12.2e}{:>12.2e}{:>8}", r.label, r.max_rel_error, r.max_abs_gradient, r.checked);
    }
    Ok(())
}
