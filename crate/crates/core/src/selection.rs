//! K-fold cross-validation over `(lambda_a, lambda_gamma)` grids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::fit;
use crate::data::{scale_rows, OutcomeKind, Problem};
use crate::engine::{Block, Engine, Steps};
use crate::error::{Error, Result};
use crate::loss::RegressionLoss;
use crate::model::{Estimator, FitResult, Hyperparameters, ProxScaling};

/// Default `lambda_a` candidates.
pub const DEFAULT_LAMBDA_A_GRID: [f64; 5] = [0.10, 0.15, 0.20, 0.25, 0.30];

/// Cross-validation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub k: usize,
    pub lambda_a_grid: Vec<f64>,
    /// Explicit `lambda_gamma` candidates; when `None` a log-spaced grid is
    /// built from the data.
    pub lambda_gamma_grid: Option<Vec<f64>>,
    /// Size of the data-driven `lambda_gamma` grid.
    pub n_lambda_gamma: usize,
    /// Smallest over largest value of the data-driven grid.
    pub lambda_gamma_ratio: f64,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            k: 5,
            lambda_a_grid: DEFAULT_LAMBDA_A_GRID.to_vec(),
            lambda_gamma_grid: None,
            n_lambda_gamma: 8,
            lambda_gamma_ratio: 0.01,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::CrossValidation(msg));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        check_grid("lambda_a_grid", &self.lambda_a_grid)?;
        match &self.lambda_gamma_grid {
            Some(g) => check_grid("lambda_gamma_grid", g)?,
            None => {
                if self.n_lambda_gamma == 0 {
                    return bad("n_lambda_gamma must be at least 1".into());
                }
                if !(self.lambda_gamma_ratio > 0.0 && self.lambda_gamma_ratio < 1.0) {
                    return bad(format!(
                        "lambda_gamma_ratio must lie in (0, 1), got {}",
                        self.lambda_gamma_ratio
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::CrossValidation(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::CrossValidation(format!(
            "{name} must hold finite nonnegative values"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::CrossValidation(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Shuffles `0..n` and cuts it into `k` folds whose sizes differ by at most
/// one (the first `n % k` folds are larger). Each fold is sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::CrossValidation(format!("cannot split {n} rows into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Held-out loss of a fitted model per held-out row.
///
/// Continuous outcomes score the modified outcome: `||2TY - X A Gamma||^2`.
/// Other kinds score the negative log-likelihood of the fitted model,
/// including its main effect when there is one.
pub fn held_out_loss(result: &FitResult, test: &Problem) -> Result<f64> {
    let x = test.x.values();
    let scores = x * &result.model.a;
    let rows = test.n() as f64;
    let value = match test.kind() {
        OutcomeKind::Continuous => {
            let z = scale_rows(test.y.values(), test.t.labels(), 2.0);
            (z - &scores * &result.model.gamma).norm_squared()
        }
        kind => {
            let mut eta = scale_rows(&(&scores * &result.model.gamma), test.t.labels(), 0.5);
            if let Some(d) = &result.main_effect {
                eta += x * d;
            }
            RegressionLoss::for_kind(kind).value(&eta, test.y.values())
        }
    };
    Ok(value / rows)
}

/// Cross-validated score of one hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    /// Mean held-out loss over the folds that fitted successfully.
    pub score: f64,
    pub valid_folds: usize,
    pub failed_folds: usize,
}

/// Mean held-out loss over the folds of `plan`; each fold is fitted on the
/// other rows only.
pub fn cv_score(problem: &Problem, estimator: Estimator, hyper: &Hyperparameters, plan: &CvPlan) -> Result<CvScore> {
    plan.validate()?;
    let folds = kfold_split(problem.n(), plan.k, plan.seed)?;
    Ok(score_folds(problem, estimator, hyper, &folds))
}

/// Held-out loss of each fold, `None` where the fit failed or the loss is
/// not finite. Fold `f` is fitted on the rows outside `folds[f]` only.
pub fn fold_losses(
    problem: &Problem,
    estimator: Estimator,
    hyper: &Hyperparameters,
    folds: &[Vec<usize>],
) -> Vec<Option<f64>> {
    let n = problem.n();
    folds
        .par_iter()
        .map(|test_rows| {
            let mut held = vec![false; n];
            for &i in test_rows {
                held[i] = true;
            }
            let train_rows: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
            let train = problem.subset(&train_rows);
            let test = problem.subset(test_rows);
            fit(estimator, &train, hyper, 0)
                .and_then(|r| held_out_loss(&r, &test))
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect()
}

fn score_folds(problem: &Problem, estimator: Estimator, hyper: &Hyperparameters, folds: &[Vec<usize>]) -> CvScore {
    let losses = fold_losses(problem, estimator, hyper, folds);
    let valid: Vec<f64> = losses.iter().flatten().copied().collect();
    CvScore {
        score: if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        },
        valid_folds: valid.len(),
        failed_folds: losses.len() - valid.len(),
    }
}

/// Largest useful `lambda_gamma`: the smallest value that keeps `Gamma` at
/// zero on the first update from the default start (`Gamma = 0`, `D = 0`).
///
/// This is the largest gradient magnitude in `Gamma`, times the accepted
/// unpenalized step length when the simultaneous solvers threshold by
/// `lambda` itself.
pub fn lambda_gamma_max(problem: &Problem, estimator: Estimator, hyper: &Hyperparameters) -> Result<f64> {
    hyper.validate_for(&problem.x)?;
    let loss = RegressionLoss::for_kind(problem.kind());
    let (x, t, y) = (problem.x.values(), problem.t.labels(), problem.y.values());
    let engine = Engine::new(x, t, y, Some(loss), hyper);
    let start = engine.default_init(hyper.d, false);
    let grad = engine.grad_gamma(&start).amax();
    if !estimator.is_simultaneous() || hyper.prox_scaling == ProxScaling::Standard {
        return Ok(grad);
    }
    let free = Hyperparameters {
        lambda_gamma: 0.0,
        ..hyper.clone()
    };
    let engine = Engine::new(x, t, y, Some(loss), &free);
    let mut probe = start;
    let mut step = Steps::initial(&free).gamma;
    engine.prox_update(&mut probe, Block::Gamma, &mut step)?;
    Ok(step * grad)
}

/// Increasing log-spaced grid of `len` values ending at `max`.
pub fn log_grid(max: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![max];
    }
    let lo = (max * ratio).ln();
    let hi = max.ln();
    (0..len)
        .map(|i| (lo + (hi - lo) * i as f64 / (len - 1) as f64).exp())
        .collect()
}

/// One row of the CV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub lambda_a: f64,
    pub lambda_gamma: f64,
    pub score: f64,
    pub valid_folds: usize,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub lambda_a: f64,
    pub lambda_gamma: f64,
    pub score: f64,
    /// Every grid cell, `lambda_a` outer, `lambda_gamma` inner, both increasing.
    pub table: Vec<CvCell>,
}

/// Grid search minimizing the CV score. Ties go to the larger `lambda_a`,
/// then the larger `lambda_gamma`.
pub fn select_lambdas(
    problem: &Problem,
    estimator: Estimator,
    hyper: &Hyperparameters,
    plan: &CvPlan,
) -> Result<Selection> {
    plan.validate()?;
    hyper.validate_for(&problem.x)?;
    let gamma_grid = match &plan.lambda_gamma_grid {
        Some(g) => g.clone(),
        None => {
            let max = lambda_gamma_max(problem, estimator, hyper)?;
            if !(max > 0.0 && max.is_finite()) {
                return Err(Error::CrossValidation(format!("degenerate lambda_gamma scale {max}")));
            }
            log_grid(max, plan.lambda_gamma_ratio, plan.n_lambda_gamma)
        }
    };
    let folds = kfold_split(problem.n(), plan.k, plan.seed)?;
    let cells: Vec<(f64, f64)> = plan
        .lambda_a_grid
        .iter()
        .flat_map(|&la| gamma_grid.iter().map(move |&lg| (la, lg)))
        .collect();
    let table: Vec<CvCell> = cells
        .par_iter()
        .map(|&(la, lg)| {
            let h = Hyperparameters {
                lambda_a: la,
                lambda_gamma: lg,
                ..hyper.clone()
            };
            let s = score_folds(problem, estimator, &h, &folds);
            CvCell {
                lambda_a: la,
                lambda_gamma: lg,
                score: s.score,
                valid_folds: s.valid_folds,
                failed_folds: s.failed_folds,
            }
        })
        .collect();
    let best = best_cell(&table).ok_or_else(|| Error::CrossValidation("every grid cell failed".into()))?;
    Ok(Selection {
        lambda_a: best.lambda_a,
        lambda_gamma: best.lambda_gamma,
        score: best.score,
        table,
    })
}

/// Minimizing cell, preferring larger `lambda_a` and then larger
/// `lambda_gamma` among exact ties.
pub fn best_cell(table: &[CvCell]) -> Option<&CvCell> {
    let mut best: Option<&CvCell> = None;
    for cell in table.iter().filter(|c| c.score.is_finite()) {
        best = match best {
            None => Some(cell),
            Some(b) => {
                let better = cell.score < b.score
                    || (cell.score == b.score
                        && (cell.lambda_a > b.lambda_a
                            || (cell.lambda_a == b.lambda_a && cell.lambda_gamma > b.lambda_gamma)));
                Some(if better { cell } else { b })
            }
        };
    }
    best
}

/// CV table as CSV text.
pub fn cv_table_csv(table: &[CvCell]) -> String {
    let mut out = String::from("lambda_a,lambda_gamma,score,valid_folds,failed_folds\n");
    for c in table {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.lambda_a, c.lambda_gamma, c.score, c.valid_folds, c.failed_folds
        ));
    }
    out
}
