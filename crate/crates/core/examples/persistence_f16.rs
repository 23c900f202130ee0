//! Half-precision logits: the file shrinks and every stored value is the
//! nearest binary16 number to the original.

use caad::bench::synthetic_space;
use caad::{GroundingSpace, LogitDtype, SpaceBuilder, SpaceMeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = synthetic_space(2_000, 64, 1_024, 42);
    let mut half = SpaceBuilder::new(SpaceMeta {
        logit_dtype: LogitDtype::Float16,
        ..full.meta().clone()
    })?;
    for e in full.iter() {
        half.append(e.to_owned())?;
    }
    let half = half.seal();

    let dir = std::env::temp_dir();
    let (p32, p16) = (dir.join("demo_f32.caad"), dir.join("demo_f16.caad"));
    full.save(&p32)?;
    half.save(&p16)?;
    let loaded = GroundingSpace::load(&p16)?;

    let mut worst = 0f64;
    for i in 0..full.len() {
        for (a, b) in full.logits(i).iter().zip(loaded.logits(i)) {
            worst = worst.max(((a - b) / a).abs() as f64);
        }
    }
    let size = |p: &std::path::Path| std::fs::metadata(p).map(|m| m.len());
    println!("float32 file: {} bytes", size(&p32)?);
    println!("float16 file: {} bytes", size(&p16)?);
    println!("largest relative rounding error: {worst:.2e} (binary16 step is 2^-11 = {:.2e})", 2f64.powi(-11));
    assert!(GroundingSpace::load(&p32)? == full);
    Ok(())
}
