//! Probe the GP along rays leaving the data and watch the prediction settle
//! at one half as the kernel vector vanishes.

use ue_probe::harness::{run_theorem_check, Experiment, ExperimentConfig, Method, ModelStore};

fn main() -> ue_probe::Result<()> {
    let cfg = ExperimentConfig {
        experiment: Experiment::TheoremCheck,
        methods: vec![Method::Gp],
        ..Default::default()
    };
    let report = run_theorem_check(&cfg, &ModelStore::default())?;
    for row in report.rows.iter().filter(|r| r.probe_id.starts_with("ray00")) {
        println!(
            "{:10} ||k*||inf {:9.2e}  p1 {:.10}  entropy {:.10}",
            row.descriptor, row.extra["kstar_inf"], row.p_class1, row.entropy_nats
        );
    }
    for s in &report.summaries {
        println!("{} = {}", s.key, s.value);
    }
    Ok(())
}
