//! Scratch harness for parameter sweeps (not part of the test suite).

use elevio::mode::ManualTriggers;
use elevio::pipeline::{run, RunConfig};
use elevio::sim::{generate, Scenario};

fn main() {
    for (accel_noise, sae, sa2) in [
        (0.015, 0.5, 4e-6),
        (0.008, 0.5, 1e-6),
        (0.008, 1.0, 1e-6),
        (0.008, 0.25, 1e-6),
    ] {
        eprintln!("--- accel_noise {accel_noise} sigma_ae^2 {sae} sigma_a^2 {sa2}");
        for seed in [7u64, 11, 23, 42, 99] {
            let mut scenario = Scenario::ride_sequence(&[5, 1, 6]);
            scenario.seed = seed;
            scenario.imu.accel_noise_std = accel_noise;
            let (events, gt) = generate(&scenario).unwrap();
            let err = |o: &elevio::pipeline::RunOutcome| -> f64 {
                let last = o.trajectory.last().unwrap();
                let est = last.p.z - o.trajectory[0].p.z;
                let truth = gt.last().unwrap().p.z - gt[0].p.z;
                (est - truth).abs()
            };
            let mut cfg = RunConfig::default();
            cfg.noise.sigma_ae_sq = sae;
            cfg.noise.sigma_a_sq = sa2;
            let full = run(&events, cfg.clone(), ManualTriggers::default());
            let mut cfg2 = cfg.clone();
            cfg2.disable_zupt = true;
            let nozupt = run(&events, cfg2, ManualTriggers::default());
            eprintln!(
                "  seed {:3}: e_full {:7.4} e_nozupt {:7.4} ratio {:6.1} exits {}/{}",
                seed, err(&full), err(&nozupt), err(&nozupt) / err(&full),
                full.report.exit_flags.len(), nozupt.report.exit_flags.len(),
            );
        }
    }
}
