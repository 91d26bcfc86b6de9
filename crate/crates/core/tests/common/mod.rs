//! Helpers shared by the integration suites.
#![allow(dead_code)]

use adaptive_sampling::geometry::Point;
use adaptive_sampling::gp::{Dataset, GpPosterior};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The first consensus problem of a seeded episode: initial poses, one noisy
/// measurement per robot and the controller's GP.
pub fn first_instance(
    cfg: &adaptive_sampling::sim::ExperimentConfig,
) -> (Vec<adaptive_sampling::admm::AgentProblem>, GpPosterior) {
    use adaptive_sampling::admm::AgentProblem;
    use adaptive_sampling::geometry::movement_region;
    use adaptive_sampling::sim::{initial_poses, measure};
    use adaptive_sampling::vehicle::ControlInput;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poses = initial_poses(cfg, &mut rng).unwrap();
    let field = cfg.ground_truth_field(cfg.seed).unwrap();
    let positions: Vec<Point> = poses.iter().map(|s| s.position()).collect();
    let mut data = Dataset::default();
    for p in &positions {
        data.push(*p, measure(&field, p, cfg.noise_sd, &mut rng).unwrap());
    }
    let problems = poses
        .iter()
        .enumerate()
        .map(|(i, s)| AgentProblem {
            index: i,
            start_state: *s,
            u_prev: ControlInput::ZERO,
            region: movement_region(i, &positions, &cfg.domain, cfg.safety_margin).unwrap().0,
            bounds: cfg.bounds,
            weights: cfg.weights,
            horizon: cfg.horizon,
            dt: cfg.dt,
        })
        .collect();
    (problems, GpPosterior::new(&data, &cfg.controller_hyperparams()).unwrap())
}

/// `metrics.csv` of a record with the `wall_ms` column dropped.
pub fn metrics_without_wall(record: &adaptive_sampling::sim::MetricsRecord) -> String {
    let mut buf = Vec::new();
    adaptive_sampling::sim::write_metrics_csv(std::slice::from_ref(record), &mut buf).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}
