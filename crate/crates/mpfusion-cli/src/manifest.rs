//! Run manifest: a flat `key = value` echo of the exact resolved
//! configuration plus run metadata, written next to every CSV output.

use mpfusion::experiment::{ExperimentConfig, ResultTable};

use crate::config_file::format_vector;

pub fn write_manifest(config: &ExperimentConfig, started: u64, finished: u64, table: Option<&ResultTable>) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };

    kv("tool", "mpfusion".into());
    kv("version", env!("CARGO_PKG_VERSION").into());
    kv("started_unix", started.to_string());
    kv("finished_unix", finished.to_string());
    kv("d_x", config.d_x.to_string());
    kv("d_theta_g", config.d_theta_g.to_string());
    kv("theta_full", format_vector(config.theta_full.iter()));
    kv("sigma_u2", config.sigma_u2.to_string());
    kv("sigma_v2", config.sigma_v2.to_string());
    kv("T", config.t_steps.to_string());
    kv("K", config.k_partitions.to_string());
    kv("particles_per_unit", config.particles_per_unit.to_string());
    kv("realizations", config.realizations.to_string());
    kv(
        "algorithms",
        config
            .canonical_algorithms()
            .iter()
            .map(|a| a.label())
            .collect::<Vec<_>>()
            .join(","),
    );
    kv("master_seed", config.master_seed.to_string());
    kv("sigma_rw2", config.sigma_rw2.to_string());
    kv("pd_floor", config.pd_floor.to_string());
    kv("n_total", config.n_total().to_string());
    kv("n_per_filter", config.n_per_filter().to_string());
    if let Some(table) = table {
        for a in config.canonical_algorithms() {
            kv(
                &format!("failed_realizations_{}", a.label()),
                table.failed_realizations(a).to_string(),
            );
        }
    }
    out
}
