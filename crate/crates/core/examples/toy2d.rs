//! Toy 2D experiment. Pass methods as arguments (default: gp mcdropout) and
//! an optional `--csv <path>` to keep the per-probe rows.

use ue_probe::harness::{run_toy2d, write_report, ExperimentConfig, Method, ModelStore, ReportFormat};

fn main() -> ue_probe::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let csv = args.iter().position(|a| a == "--csv").map(|i| {
        let path = args.get(i + 1).cloned().expect("--csv needs a path");
        args.drain(i..=i + 1);
        path
    });
    let methods = if args.is_empty() {
        vec![Method::Gp, Method::McDropout]
    } else {
        args.iter().map(|a| a.parse()).collect::<ue_probe::Result<_>>()?
    };
    let cfg = ExperimentConfig {
        methods,
        ..Default::default()
    };
    let report = run_toy2d(&cfg, &ModelStore::default())?;
    for s in &report.summaries {
        println!("{:10} {:22} {:.6}", s.method, s.key, s.value);
    }
    if let Some(path) = csv {
        write_report(&report, &path, ReportFormat::Csv)?;
        println!("rows written to {path}");
    }
    Ok(())
}
