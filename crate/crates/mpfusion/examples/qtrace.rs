// scratch probe: trace the fused posterior over one realization
use mpfusion::experiment::{derive_seed, trajectory_for, ExperimentConfig};
use mpfusion::filters::{FilterKind, FilterParams, FilterState};

fn main() {
    let cfg = ExperimentConfig {
        realizations: 1,
        t_steps: 50,
        ..ExperimentConfig::default()
    };
    let model = cfg.model().unwrap();
    let traj = trajectory_for(&cfg, 0).unwrap();
    let seed = derive_seed(cfg.master_seed, 0, "mpf-fusion");
    let mut f = FilterState::init(FilterKind::MpfFusion, &model, cfg.n_total(), FilterParams::default(), seed).unwrap();
    println!("true theta = [2, -2]");
    for t in 0..cfg.t_steps {
        let est = f.step(&model, &traj.observation_at(t)).unwrap();
        let q = f.fused_prior().unwrap();
        if t < 10 || (t + 1) % 10 == 0 {
            println!(
                "t={:2} qmean=[{:+.3} {:+.3}] qvar=[{:.5} {:.5}] product_only={} abstained={} failed={}",
                t + 1,
                q.mean()[0], q.mean()[1],
                q.cov()[(0, 0)], q.cov()[(1, 1)],
                f.diagnostics().product_only,
                f.diagnostics().abstained,
                est.failed
            );
        }
    }
}
