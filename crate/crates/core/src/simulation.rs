//! Synthetic two-arm trials with a misspecified quadratic main effect and a
//! low-rank sparse treatment effect, and the replicated MSE benchmark over
//! the four estimators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::fit;
use crate::data::{scale_rows, DesignMatrix, OutcomeKind, OutcomeMatrix, Problem, TreatmentAssignment};
use crate::error::{check_dims, Error, Result};
use crate::model::{Estimator, Hyperparameters};
use crate::selection::{select_lambdas, CvPlan};

/// One of the four simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub setting: u8,
    pub n: usize,
    /// Covariates excluding the intercept.
    pub m: usize,
    pub p: usize,
    pub d: usize,
    pub sigma0: f64,
    pub rho: f64,
    /// Main-effect coefficients on the design with intercept (`m + 1` entries).
    pub beta_star: Vec<f64>,
}

impl ScenarioSpec {
    /// Settings 1 and 3 have a moderate main effect, 2 and 4 a big one;
    /// covariates are independent in 1 and 2 and equicorrelated (1/3) in
    /// 3 and 4.
    pub fn setting(setting: u8) -> Result<Self> {
        let (scale, rho) = match setting {
            1 => (6f64, 0.0),
            2 => (3.0, 0.0),
            3 => (6.0, 1.0 / 3.0),
            4 => (3.0, 1.0 / 3.0),
            other => return Err(Error::InvalidInput(format!("unknown setting {other}, expected 1-4"))),
        };
        let m = 49;
        let mut beta_star = vec![0.0; m + 1];
        beta_star[0] = 1.0 / scale.sqrt();
        for b in &mut beta_star[3..11] {
            *b = 1.0 / (2.0 * scale.sqrt());
        }
        Ok(Self {
            setting,
            n: 100,
            m,
            p: 10,
            d: 5,
            sigma0: 2f64.sqrt(),
            rho,
            beta_star,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.n == 0 || self.m == 0 || self.p == 0 || self.d == 0 {
            return Err(Error::InvalidInput("scenario dimensions must be positive".into()));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma0 must be nonnegative, got {}",
                self.sigma0
            )));
        }
        check_dims("beta_star", (self.m + 1, 1), (self.beta_star.len(), 1))
    }
}

/// True loadings and latent coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub a_true: DMatrix<f64>,
    pub gamma_true: DMatrix<f64>,
}

impl TrueParams {
    /// Block-diagonal `A` with `(m+1)/d` equal entries per column (unit
    /// norm) and `Gamma` with `(0.8, -0.8)` on outcomes `2k, 2k+1` of
    /// component `k`.
    pub fn for_spec(spec: &ScenarioSpec) -> Result<Self> {
        let rows = spec.m + 1;
        if !rows.is_multiple_of(spec.d) || spec.p != 2 * spec.d {
            return Err(Error::InvalidInput(format!(
                "block structure needs d | m+1 and p = 2d, got m+1 = {rows}, d = {}, p = {}",
                spec.d, spec.p
            )));
        }
        let block = rows / spec.d;
        let value = 1.0 / (block as f64).sqrt();
        let a_true = DMatrix::from_fn(rows, spec.d, |i, k| if i / block == k { value } else { 0.0 });
        let gamma_true = DMatrix::from_fn(spec.d, spec.p, |k, j| match j.checked_sub(2 * k) {
            Some(0) => 0.8,
            Some(1) => -0.8,
            _ => 0.0,
        });
        Ok(Self { a_true, gamma_true })
    }

    /// `X A_true Gamma_true`.
    pub fn effect(&self, x: &DesignMatrix) -> Result<DMatrix<f64>> {
        check_dims(
            "design for true effect",
            (x.n(), self.a_true.nrows()),
            x.values().shape(),
        )?;
        Ok(x.values() * &self.a_true * &self.gamma_true)
    }
}

/// Mixes a master seed with two indices into an independent seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = splitmix64(master ^ splitmix64(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ splitmix64(b)));
    z ^= z >> 31;
    z
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rows drawn from `N(0, (1 - rho) I + rho 11')` through the Cholesky factor.
pub fn gen_covariates(n: usize, m: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must lie in [0, 1), got {rho}")));
    }
    let cov = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(z * chol.l().transpose())
}

/// Fair `+1 / -1` labels.
pub fn gen_treatment(n: usize, seed: u64) -> TreatmentAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    TreatmentAssignment::new(labels).expect("labels are +1 or -1")
}

/// One simulated trial with its true treatment effect.
#[derive(Debug, Clone)]
pub struct SimulatedDraw {
    pub problem: Problem,
    pub true_effect: DMatrix<f64>,
}

/// Latent continuous outcomes `(X D) o (X D) + (1/2) T X A Gamma + E` with the
/// design, labels and true effect.
fn draw_latent(
    spec: &ScenarioSpec,
    truth: &TrueParams,
    seed: u64,
) -> Result<(DesignMatrix, TreatmentAssignment, DMatrix<f64>, DMatrix<f64>)> {
    draw_latent_with(spec, truth, seed, None)
}

/// As [`draw_latent`], optionally replacing the drawn labels by `arm`.
fn draw_latent_with(
    spec: &ScenarioSpec,
    truth: &TrueParams,
    seed: u64,
    arm: Option<&TreatmentAssignment>,
) -> Result<(DesignMatrix, TreatmentAssignment, DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    check_dims("true loadings", (spec.m + 1, spec.d), truth.a_true.shape())?;
    check_dims("true latent coefficients", (spec.d, spec.p), truth.gamma_true.shape())?;
    let raw = gen_covariates(spec.n, spec.m, spec.rho, derive_seed(seed, 0, 0))?;
    let mut values = DMatrix::from_element(spec.n, spec.m + 1, 1.0);
    values.columns_mut(1, spec.m).copy_from(&raw);
    let x = DesignMatrix::new(values)?;
    let t = match arm {
        Some(t) => {
            check_dims("arm labels", (spec.n, 1), (t.len(), 1))?;
            t.clone()
        }
        None => gen_treatment(spec.n, derive_seed(seed, 1, 0)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let mut noise = DMatrix::zeros(spec.n, spec.p);
    for i in 0..spec.n {
        for j in 0..spec.p {
            noise[(i, j)] = spec.sigma0 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let main = x.values() * DVector::from_column_slice(&spec.beta_star);
    let effect = truth.effect(&x)?;
    let mut y = scale_rows(&effect, t.labels(), 0.5) + noise;
    for i in 0..spec.n {
        let q = main[i] * main[i];
        for j in 0..spec.p {
            y[(i, j)] += q;
        }
    }
    Ok((x, t, y, effect))
}

/// Continuous outcomes of the draw for `seed` with every subject treated
/// (`+1`) and with every subject a control (`-1`), sharing covariates and
/// noise.
pub fn potential_outcomes(spec: &ScenarioSpec, truth: &TrueParams, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let treated = TreatmentAssignment::new(vec![1.0; spec.n])?;
    let (_, _, y_treated, _) = draw_latent_with(spec, truth, seed, Some(&treated))?;
    let (_, _, y_control, _) = draw_latent_with(spec, truth, seed, Some(&treated.flipped()))?;
    Ok((y_treated, y_control))
}

pub fn gen_continuous(spec: &ScenarioSpec, truth: &TrueParams, seed: u64) -> Result<SimulatedDraw> {
    let (x, t, y, true_effect) = draw_latent(spec, truth, seed)?;
    Ok(SimulatedDraw {
        problem: Problem::new(x, t, OutcomeMatrix::continuous(y)?)?,
        true_effect,
    })
}

/// The continuous draw for the same seed, dichotomized as `I(Y > 0)`.
pub fn gen_binary(spec: &ScenarioSpec, truth: &TrueParams, seed: u64) -> Result<SimulatedDraw> {
    let (x, t, y, true_effect) = draw_latent(spec, truth, seed)?;
    let y = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    Ok(SimulatedDraw {
        problem: Problem::new(x, t, OutcomeMatrix::binary(y)?)?,
        true_effect,
    })
}

pub fn gen_draw(spec: &ScenarioSpec, truth: &TrueParams, kind: OutcomeKind, seed: u64) -> Result<SimulatedDraw> {
    match kind {
        OutcomeKind::Continuous => gen_continuous(spec, truth, seed),
        OutcomeKind::Binary => gen_binary(spec, truth, seed),
        other => Err(Error::InvalidInput(format!(
            "no simulation design for {other} outcomes"
        ))),
    }
}

/// `(1/n) ||effect_hat - X A_true Gamma_true||_F^2`.
pub fn mse(effect_hat: &DMatrix<f64>, x: &DesignMatrix, truth: &TrueParams) -> Result<f64> {
    let true_effect = truth.effect(x)?;
    check_dims("estimated effect", true_effect.shape(), effect_hat.shape())?;
    Ok((effect_hat - true_effect).norm_squared() / x.n() as f64)
}

/// First quartile, median and third quartile by linear interpolation
/// between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Quartiles {
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

/// How the benchmark picks `lambda_a` and `lambda_gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum LambdaSelection {
    /// The same values for every fit.
    Fixed { lambda_a: f64, lambda_gamma: f64 },
    /// Cross-validation once per cell on an extra draw that is not scored.
    Pilot,
    /// Cross-validation on every replication's own draw.
    PerReplication,
}

/// Per-replication record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub mse: Option<f64>,
    pub error: Option<String>,
    pub lambda_a: f64,
    pub lambda_gamma: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub max_trace_increase: f64,
    pub max_orthonormality_error: f64,
}

/// Aggregate of one (setting, outcome kind, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub setting: u8,
    pub kind: OutcomeKind,
    pub estimator: Estimator,
    pub label: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub failures: usize,
    pub reps: Vec<RepOutcome>,
}

impl ScenarioResult {
    pub fn mses(&self) -> Vec<f64> {
        self.reps.iter().filter_map(|r| r.mse).collect()
    }

    pub fn max_trace_increase(&self) -> f64 {
        self.reps.iter().map(|r| r.max_trace_increase).fold(0.0, f64::max)
    }

    pub fn max_orthonormality_error(&self) -> f64 {
        self.reps.iter().map(|r| r.max_orthonormality_error).fold(0.0, f64::max)
    }
}

/// Seed of replication `rep` of `setting`; shared by every estimator and
/// both outcome kinds so they are scored on the same draws.
pub fn rep_seed(master: u64, setting: u8, rep: usize) -> u64 {
    derive_seed(master, setting as u64, rep as u64)
}

fn pilot_seed(master: u64, setting: u8) -> u64 {
    derive_seed(master, setting as u64 + 1000, u64::MAX)
}

fn choose(draw: &SimulatedDraw, estimator: Estimator, hyper: &Hyperparameters, plan: &CvPlan) -> Result<(f64, f64)> {
    let sel = select_lambdas(&draw.problem, estimator, hyper, plan)?;
    Ok((sel.lambda_a, sel.lambda_gamma))
}

/// Runs `reps` replications of one cell and aggregates the MSEs.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario(
    spec: &ScenarioSpec,
    kind: OutcomeKind,
    estimator: Estimator,
    reps: usize,
    seed: u64,
    hyper: &Hyperparameters,
    plan: &CvPlan,
    selection: LambdaSelection,
) -> Result<ScenarioResult> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let truth = TrueParams::for_spec(spec)?;
    let hyper = Hyperparameters {
        d: spec.d,
        ..hyper.clone()
    };
    let fixed = match selection {
        LambdaSelection::Fixed { lambda_a, lambda_gamma } => Some((lambda_a, lambda_gamma)),
        LambdaSelection::Pilot => {
            let pilot = gen_draw(spec, &truth, kind, pilot_seed(seed, spec.setting))?;
            Some(choose(&pilot, estimator, &hyper, plan)?)
        }
        LambdaSelection::PerReplication => None,
    };
    let outcomes: Vec<RepOutcome> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rseed = rep_seed(seed, spec.setting, rep);
            let mut out = RepOutcome {
                rep,
                seed: rseed,
                mse: None,
                error: None,
                lambda_a: f64::NAN,
                lambda_gamma: f64::NAN,
                sweeps: 0,
                converged: false,
                max_trace_increase: 0.0,
                max_orthonormality_error: 0.0,
            };
            let attempt = (|| -> Result<()> {
                let draw = gen_draw(spec, &truth, kind, rseed)?;
                let (la, lg) = match fixed {
                    Some(v) => v,
                    None => choose(&draw, estimator, &hyper, plan)?,
                };
                out.lambda_a = la;
                out.lambda_gamma = lg;
                let h = Hyperparameters {
                    lambda_a: la,
                    lambda_gamma: lg,
                    ..hyper.clone()
                };
                let result = fit(estimator, &draw.problem, &h, rseed)?;
                out.sweeps = result.sweeps();
                out.converged = result.converged;
                out.max_trace_increase = result.max_trace_increase();
                out.max_orthonormality_error = result.max_orthonormality_error;
                out.mse = Some(mse(&result.effect, &draw.problem.x, &truth)?);
                Ok(())
            })();
            if let Err(e) = attempt {
                out.error = Some(e.to_string());
            }
            out
        })
        .collect();
    let mses: Vec<f64> = outcomes.iter().filter_map(|o| o.mse).collect();
    let q = quartiles(&mses).unwrap_or(Quartiles {
        q1: f64::NAN,
        median: f64::NAN,
        q3: f64::NAN,
    });
    Ok(ScenarioResult {
        setting: spec.setting,
        kind,
        estimator,
        label: estimator.label(kind).to_string(),
        median: q.median,
        q1: q.q1,
        q3: q.q3,
        failures: reps - mses.len(),
        reps: outcomes,
    })
}

/// Full benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub settings: Vec<u8>,
    pub kinds: Vec<OutcomeKind>,
    pub estimators: Vec<Estimator>,
    pub reps: usize,
    pub seed: u64,
    /// `omega`, step policy and stopping rule shared by every fit; `d`
    /// comes from the scenario and the lambdas from `selection`.
    pub hyper: Hyperparameters,
    pub plan: CvPlan,
    pub selection: LambdaSelection,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            settings: vec![1, 2, 3, 4],
            kinds: vec![OutcomeKind::Continuous, OutcomeKind::Binary],
            estimators: Estimator::ALL.to_vec(),
            reps: 100,
            seed: 7,
            hyper: Hyperparameters {
                omega: 0.1,
                d: 5,
                ..Default::default()
            },
            plan: CvPlan::default(),
            selection: LambdaSelection::Pilot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub cells: Vec<ScenarioResult>,
}

/// Every (kind, setting, estimator) cell in that nesting order.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let mut jobs = Vec::new();
    for &kind in &config.kinds {
        for &setting in &config.settings {
            for &estimator in &config.estimators {
                jobs.push((kind, setting, estimator));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(kind, setting, estimator)| {
            let spec = ScenarioSpec::setting(setting)?;
            let plan = CvPlan {
                seed: derive_seed(config.seed, setting as u64, 0xCF),
                ..config.plan.clone()
            };
            run_scenario(
                &spec,
                kind,
                estimator,
                config.reps,
                config.seed,
                &config.hyper,
                &plan,
                config.selection,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport {
        config: config.clone(),
        cells,
    })
}

impl BenchmarkReport {
    pub fn cell(&self, setting: u8, kind: OutcomeKind, estimator: Estimator) -> Option<&ScenarioResult> {
        self.cells
            .iter()
            .find(|c| c.setting == setting && c.kind == kind && c.estimator == estimator)
    }

    /// Median and IQR table for one outcome kind, two settings per block.
    pub fn render_table(&self, kind: OutcomeKind) -> String {
        let mut out = format!("Results for {kind} outcomes\n");
        for pair in self.config.settings.chunks(2) {
            out.push_str(&format!("{:<22}", "Model"));
            for s in pair {
                out.push_str(&format!("| Setting{s:<6}{:<18}", ""));
            }
            out.push('\n');
            out.push_str(&format!("{:<22}", ""));
            for _ in pair {
                out.push_str(&format!("| {:<8} {:<22}", "Median", "IQR"));
            }
            out.push('\n');
            for (i, &est) in self.config.estimators.iter().enumerate() {
                out.push_str(&format!("{:<22}", format!("{} {}", i + 1, est.label(kind))));
                for &s in pair {
                    match self.cell(s, kind, est) {
                        Some(c) => out.push_str(&format!(
                            "| {:<8.3} {:<22}",
                            c.median,
                            format!("[{:.3}, {:.3}]", c.q1, c.q3)
                        )),
                        None => out.push_str(&format!("| {:<8} {:<22}", "-", "-")),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    /// One line per cell.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "kind,setting,estimator,label,median,q1,q3,reps,failures,max_trace_increase,max_orthonormality_error\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{:e},{:e}\n",
                c.kind,
                c.setting,
                c.estimator,
                c.label,
                c.median,
                c.q1,
                c.q3,
                c.reps.len(),
                c.failures,
                c.max_trace_increase(),
                c.max_orthonormality_error()
            ));
        }
        out
    }

    /// One line per replication.
    pub fn reps_csv(&self) -> String {
        let mut out =
            String::from("kind,setting,estimator,rep,seed,mse,lambda_a,lambda_gamma,sweeps,converged,error\n");
        for c in &self.cells {
            for r in &c.reps {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    c.kind,
                    c.setting,
                    c.estimator,
                    r.rep,
                    r.seed,
                    r.mse.map(|v| v.to_string()).unwrap_or_default(),
                    r.lambda_a,
                    r.lambda_gamma,
                    r.sweeps,
                    r.converged,
                    r.error.as_deref().unwrap_or("").replace(',', ";")
                ));
            }
        }
        out
    }
}
