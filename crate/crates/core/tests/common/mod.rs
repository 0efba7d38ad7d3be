#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smrmom::linalg::procrustes;
use smrmom::{build_design, DesignMatrix, FactorModel, OutcomeKind, OutcomeMatrix, Problem, TreatmentAssignment};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn design(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DesignMatrix {
    build_design(&normal(rng, n, m, 1.0), false).unwrap()
}

pub fn treatment(rng: &mut ChaCha8Rng, n: usize) -> TreatmentAssignment {
    TreatmentAssignment::new((0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()).unwrap()
}

pub fn outcomes(rng: &mut ChaCha8Rng, n: usize, p: usize, kind: OutcomeKind) -> OutcomeMatrix {
    let values = match kind {
        OutcomeKind::Continuous => normal(rng, n, p, 1.0),
        OutcomeKind::Binary => DMatrix::from_fn(n, p, |_, _| if rng.gen::<bool>() { 1.0 } else { 0.0 }),
        OutcomeKind::Multiclass => {
            let mut y = DMatrix::zeros(n, p);
            for i in 0..n {
                y[(i, rng.gen_range(0..p))] = 1.0;
            }
            y
        }
        OutcomeKind::Count => DMatrix::from_fn(n, p, |_, _| rng.gen_range(0..5) as f64),
    };
    OutcomeMatrix::new(values, kind).unwrap()
}

pub fn problem(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, kind: OutcomeKind) -> Problem {
    let x = design(rng, n, m);
    let t = treatment(rng, n);
    let y = outcomes(rng, n, p, kind);
    Problem::new(x, t, y).unwrap()
}

/// Random dense model with orthonormal `B`.
pub fn model(rng: &mut ChaCha8Rng, rows: usize, d: usize, p: usize, scale: f64) -> FactorModel {
    let a = normal(rng, rows, d, scale);
    let b = procrustes(&normal(rng, rows, d, 1.0));
    let gamma = normal(rng, d, p, scale);
    FactorModel::new(a, b, gamma).unwrap()
}

/// Central differences of `f` at `x`, step `h * max(1, |x_ij|)`.
pub fn numeric_gradient(x: &DMatrix<f64>, h: f64, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let step = h * x[(i, j)].abs().max(1.0);
        let mut up = x.clone();
        up[(i, j)] += step;
        let mut down = x.clone();
        down[(i, j)] -= step;
        (f(&up) - f(&down)) / (2.0 * step)
    })
}

/// `max |a - b| / max(max |b|, 1e-12)`.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(1e-12)
}
