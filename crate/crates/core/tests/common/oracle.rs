//! Independent alternating exact minimizer restarted from many random
//! points, for small unpenalized instances.

use super::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use smrmom::binary::objective_binary;
use smrmom::continuous::objective_continuous;
use smrmom::{
    fit_binary, fit_continuous, BinaryProblem, ContinuousProblem, Hyperparameters, OutcomeKind, OutcomeMatrix, Problem,
};

pub const N: usize = 20;
pub const M: usize = 3;
pub const P: usize = 2;
pub const OMEGA: f64 = 0.01;
pub const RESTARTS: usize = 50;

pub fn hyper() -> Hyperparameters {
    Hyperparameters {
        omega: OMEGA,
        lambda_a: 0.0,
        lambda_gamma: 0.0,
        d: 1,
        tol: 1e-12,
        max_sweeps: 200_000,
        ..Default::default()
    }
}

pub struct Data {
    pub x: DMatrix<f64>,
    pub t: DVector<f64>,
    y: DMatrix<f64>,
}

impl Data {
    pub fn of(problem: &Problem) -> Self {
        Self {
            x: problem.x.values().clone(),
            t: problem.t.labels().clone(),
            y: problem.y.values().clone(),
        }
    }

    /// `(1/2) T X`.
    fn w(&self) -> DMatrix<f64> {
        let mut w = self.x.clone() * 0.5;
        for i in 0..w.nrows() {
            let ti = self.t[i];
            w.row_mut(i).scale_mut(ti);
        }
        w
    }

    fn reconstruction(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        OMEGA * (&self.x - &self.x * a * b.transpose()).norm_squared()
    }

    fn best_b(&self, a: &DVector<f64>) -> DVector<f64> {
        let v = self.x.transpose() * (&self.x * a);
        let norm = v.norm();
        if norm > 0.0 {
            v / norm
        } else {
            let mut e = DVector::zeros(a.len());
            e[0] = 1.0;
            e
        }
    }
}

pub fn random_start(r: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let a = DVector::from_fn(M + 1, |_, _| r.gen_range(-2.0..2.0));
    let b = DVector::from_fn(M + 1, |_, _| r.gen_range(-1.0..1.0)).normalize();
    let g = DVector::from_fn(P, |_, _| r.gen_range(-2.0..2.0));
    (a, b, g)
}

/// `||Y - W a g'||^2 + omega ||X - X a b'||^2` by exact block minimization.
pub fn continuous_oracle(data: &Data, seed: u64) -> f64 {
    let w = data.w();
    let gram = data.x.transpose() * &data.x;
    let wtw = w.transpose() * &w;
    let wty = w.transpose() * &data.y;
    let value = |a: &DVector<f64>, b: &DVector<f64>, g: &DVector<f64>| {
        (&data.y - &w * a * g.transpose()).norm_squared() + data.reconstruction(a, b)
    };
    let mut r = rng(seed);
    let mut best = f64::INFINITY;
    for _ in 0..RESTARTS {
        let (mut a, mut b, mut g) = random_start(&mut r);
        let mut prev = value(&a, &b, &g);
        for _ in 0..100_000 {
            let u = &w * &a;
            let uu = u.norm_squared();
            if uu > 0.0 {
                g = data.y.transpose() * &u / uu;
            }
            b = data.best_b(&a);
            let lhs = &wtw * g.norm_squared() + &gram * OMEGA;
            let rhs = &wty * &g + &gram * &b * OMEGA;
            a = lhs.lu().solve(&rhs).expect("positive definite system");
            let cur = value(&a, &b, &g);
            if prev - cur <= 1e-14 * prev.abs().max(1.0) {
                prev = cur;
                break;
            }
            prev = cur;
        }
        best = best.min(prev);
    }
    best
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Negative log-likelihood with log-odds `w_i' a g_j`, plus reconstruction.
pub fn binary_value(data: &Data, w: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let s = w * a;
    let mut nll = 0.0;
    for i in 0..data.y.nrows() {
        for j in 0..data.y.ncols() {
            let eta = s[i] * g[j];
            nll += softplus(eta) - data.y[(i, j)] * eta;
        }
    }
    nll + data.reconstruction(a, b)
}

/// Damped Newton on a smooth convex function given value, gradient and
/// Hessian callbacks.
pub fn newton(
    mut v: DVector<f64>,
    f: impl Fn(&DVector<f64>) -> f64,
    grad_hess: impl Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
) -> DVector<f64> {
    for _ in 0..100 {
        let (g, h) = grad_hess(&v);
        if g.amax() < 1e-13 {
            break;
        }
        let Some(dir) = h.lu().solve(&g) else { break };
        let f0 = f(&v);
        let mut step = 1.0;
        let mut moved = false;
        let mut gain = 0.0;
        for _ in 0..60 {
            let cand = &v - &dir * step;
            let fc = f(&cand);
            if fc <= f0 - 1e-4 * step * g.dot(&dir) {
                gain = f0 - fc;
                v = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || gain <= 1e-15 * f0.abs().max(1.0) {
            break;
        }
    }
    v
}

pub fn binary_oracle(data: &Data, seed: u64) -> f64 {
    let w = data.w();
    let gram = data.x.transpose() * &data.x;
    let (n, p) = data.y.shape();
    let mut r = rng(seed);
    let mut best = f64::INFINITY;
    for _ in 0..RESTARTS {
        let (mut a, mut b, mut g) = random_start(&mut r);
        let mut prev = binary_value(data, &w, &a, &b, &g);
        for _ in 0..20_000 {
            // Gamma: independent one-dimensional logistic fits on s = W a.
            let s = &w * &a;
            for j in 0..p {
                let col = data.y.column(j).into_owned();
                let f = |c: &DVector<f64>| {
                    (0..n)
                        .map(|i| softplus(s[i] * c[0]) - col[i] * s[i] * c[0])
                        .sum::<f64>()
                };
                let gh = |c: &DVector<f64>| {
                    let mut grad = 0.0;
                    let mut hess = 0.0;
                    for i in 0..n {
                        let q = sigmoid(s[i] * c[0]);
                        grad += s[i] * (q - col[i]);
                        hess += s[i] * s[i] * q * (1.0 - q);
                    }
                    (
                        DVector::from_element(1, grad),
                        DMatrix::from_element(1, 1, hess.max(1e-300)),
                    )
                };
                g[j] = newton(DVector::from_element(1, g[j]), f, gh)[0];
            }
            b = data.best_b(&a);
            let fa = |av: &DVector<f64>| binary_value(data, &w, av, &b, &g);
            let gha = |av: &DVector<f64>| {
                let s = &w * av;
                let mut grad = (&gram * av - &gram * &b) * (2.0 * OMEGA);
                let mut hess = &gram * (2.0 * OMEGA);
                for i in 0..n {
                    let wi = w.row(i).transpose();
                    for j in 0..p {
                        let q = sigmoid(s[i] * g[j]);
                        grad += &wi * (g[j] * (q - data.y[(i, j)]));
                        hess += &wi * wi.transpose() * (g[j] * g[j] * q * (1.0 - q));
                    }
                }
                (grad, hess)
            };
            a = newton(a.clone(), fa, gha);
            let cur = binary_value(data, &w, &a, &b, &g);
            if prev - cur <= 1e-12 * prev.abs().max(1.0) {
                prev = cur;
                break;
            }
            prev = cur;
        }
        best = best.min(prev);
    }
    best
}

/// Binary outcomes from a logistic model with a modest signal, so that the
/// unpenalized likelihood has a finite maximizer.
pub fn binary_problem(seed: u64) -> Problem {
    let mut r = rng(3000 + seed);
    let x = design(&mut r, N, M);
    let t = treatment(&mut r, N);
    let coef = normal(&mut r, M + 1, P, 0.5);
    let eta = x.values() * coef;
    let y = DMatrix::from_fn(N, P, |i, j| {
        let prob = sigmoid(0.5 * t.labels()[i] * eta[(i, j)]);
        if r.gen::<f64>() < prob {
            1.0
        } else {
            0.0
        }
    });
    Problem::new(x, t, OutcomeMatrix::binary(y).unwrap()).unwrap()
}

/// `|fit objective - oracle|` on continuous instance `seed`.
pub fn continuous_gap(seed: u64) -> f64 {
    let prob = problem(&mut rng(1000 + seed), N, M, P, OutcomeKind::Continuous);
    let oracle = continuous_oracle(&Data::of(&prob), 2000 + seed);
    let cp = ContinuousProblem::new(prob, hyper()).unwrap();
    let fit = fit_continuous(&cp, None, seed).unwrap();
    (objective_continuous(&cp, &fit.model).unwrap() - oracle).abs()
}

/// `|fit objective - oracle|` on binary instance `seed`.
pub fn binary_gap(seed: u64) -> f64 {
    let prob = binary_problem(seed);
    let oracle = binary_oracle(&Data::of(&prob), 4000 + seed);
    let bp = BinaryProblem::new(prob, hyper()).unwrap();
    let fit = fit_binary(&bp, None, seed).unwrap();
    (objective_binary(&bp, &fit.model).unwrap() - oracle).abs()
}
