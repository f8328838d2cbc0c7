//! Checks backward gradients of encoder, LASAS block and head against
//! central differences.

fn main() -> lasas::Result<()> {
    let summary = lasas::harness::gradcheck(0)?;
    for (module, err) in &summary.modules {
        println!("{module:<14} {err:.3e}");
    }
    println!("max {:.3e} (threshold {:.0e})", summary.max_rel_error, summary.threshold);
    Ok(())
}
