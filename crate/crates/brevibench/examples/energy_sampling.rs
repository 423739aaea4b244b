//! Sample mock power sources, integrate to mWh, and attribute energy to
//! per-record windows.
//!
//! ```bash
//! cargo run -p brevibench --example energy_sampling
//! ```

use brevibench::energymeter::{
    attribute, start_sampling, stop_and_integrate, AttributionMode, RecordWindow, SourceConfig,
};

fn main() -> anyhow::Result<()> {
    // constant 100 W plus a ramp climbing to 50 W, sampled every 50 ms
    let sources = vec![
        SourceConfig::Mock { watts: 100.0 },
        SourceConfig::MockRamp {
            from_watts: 0.0,
            to_watts: 50.0,
            duration_secs: 2.0,
        },
    ];
    let handle = start_sampling(&sources, 0.05)?;
    std::thread::sleep(std::time::Duration::from_secs(2));
    let trace = stop_and_integrate(handle);

    println!("run window: {:.2} s", trace.window.1 - trace.window.0);
    for series in &trace.sources {
        println!(
            "  {:<8} {} samples, {:.3} mWh",
            series.label,
            series.samples.len(),
            trace.integrated_mwh[&series.label]
        );
    }
    println!("total energy: {:.3} mWh", trace.total_mwh);

    // pretend four records ran back to back across the window
    let (start, end) = trace.window;
    let quarter = (end - start) / 4.0;
    let windows: Vec<RecordWindow> = (0..4)
        .map(|i| RecordWindow {
            id: format!("r{i}"),
            start: start + i as f64 * quarter,
            end: start + (i + 1) as f64 * quarter,
        })
        .collect();

    let uniform = attribute(&trace, &windows, AttributionMode::Uniform)?;
    let overlap = attribute(&trace, &windows, AttributionMode::Overlap)?;
    println!("\nper-record attribution (mWh):");
    println!("  record   uniform   overlap");
    for window in &windows {
        println!(
            "  {:<8} {:>7.3}   {:>7.3}",
            window.id, uniform[&window.id], overlap[&window.id]
        );
    }
    println!("(overlap mode gives later records more: the ramp source is still climbing)");
    Ok(())
}
