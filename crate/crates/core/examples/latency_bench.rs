//! Retrieval latency at a realistic size: 50,000 entries of dimension 384.
//!
//!     cargo run --release --example latency_bench -- [ENTRIES]

use caad::bench::{run, synthetic_space, DEFAULT_BUDGET_MS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let entries = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50_000);
    let space = synthetic_space(entries, 384, 512, 1);
    println!("space: {} entries, {:.1} MiB", space.len(), space.heap_bytes() as f64 / (1 << 20) as f64);
    for top_n in [1, 10, 100] {
        let r = run(&space, 50, top_n, 0.01, DEFAULT_BUDGET_MS, 2)?;
        println!(
            "N={top_n:<3} p50 {:7.3} ms  p95 {:7.3} ms  max {:7.3} ms  {}",
            r.p50_ms,
            r.p95_ms,
            r.max_ms,
            if r.pass { "within budget" } else { "OVER BUDGET" }
        );
    }
    Ok(())
}
