//! Problem instances shared by the benchmarks.

use smrmom::simulation::{gen_draw, rep_seed};
use smrmom::{Hyperparameters, OutcomeKind, Problem, ScenarioSpec, TrueParams};

/// First replication of a simulation setting.
pub fn scenario_problem(setting: u8, kind: OutcomeKind) -> Problem {
    let spec = ScenarioSpec::setting(setting).expect("settings 1-4 exist");
    let truth = TrueParams::for_spec(&spec).expect("block layout fits");
    gen_draw(&spec, &truth, kind, rep_seed(7, setting, 0))
        .expect("draw")
        .problem
}

pub fn bench_hyper() -> Hyperparameters {
    Hyperparameters {
        d: 5,
        lambda_a: 0.2,
        lambda_gamma: 1.0,
        ..Default::default()
    }
}
