//! Euler–Maruyama simulation of the adaptive homodyne phase-tracking loop with
//! a synthesized estimator in feedback, and Monte Carlo error statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ser_f64_lossless;
use crate::covariance::{build_closed_loop_from, smoothed_error_covariance, CovarianceReport};
use crate::delay::pade_delay;
use crate::model::{CompactPlant, PhaseParams, UncertainPlant};
use crate::numkernel::{self, RiccatiProblem};
use crate::numkernel::Mat;
use crate::synthesis::SynthesisSolution;

/// `|φ̂|` beyond which a run is abandoned as divergent (rad).
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Fraction of divergent runs above which a report is marked unhealthy.
pub const HEALTHY_DIVERGENCE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Filter output `φ̂(T)` against `φ(T)`.
    Ngcf,
    /// Smoothed output `C_a x̂(T)` against `φ(T − δ)`.
    RobustSmoother,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measurement {
    /// `dI = 2α sin(φ − φ̂) dt + dW`
    #[default]
    Homodyne,
    /// `dI = 2αβ (φ − φ̂) dt + dW`
    Linearized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub kappa: f64,
    pub lambda_ou: f64,
    pub alpha: f64,
    pub beta_slope: f64,
    pub gamma: f64,
    pub dt: f64,
    pub horizon: f64,
    pub delta: f64,
    pub runs: usize,
    pub master_seed: u64,
    pub estimator: EstimatorMode,
    pub measurement: Measurement,
    /// Run the estimator's internal copy of the nonlinearity.
    pub nonlinearity_copy: bool,
    /// Compare the smoothed output against `φ(T − δ)`; `false` compares against `φ(T)`.
    pub delayed_comparison: bool,
    pub keep_samples: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let p = PhaseParams::default();
        SimConfig {
            kappa: p.kappa,
            lambda_ou: p.lambda,
            alpha: p.alpha,
            beta_slope: p.beta,
            gamma: p.gamma,
            dt: 1e-8,
            horizon: 1e-3,
            delta: 3.1e-6,
            runs: 2000,
            master_seed: 42,
            estimator: EstimatorMode::RobustSmoother,
            measurement: Measurement::Homodyne,
            nonlinearity_copy: true,
            delayed_comparison: true,
            keep_samples: false,
        }
    }
}

impl SimConfig {
    pub fn with_params(p: &PhaseParams) -> Self {
        SimConfig {
            kappa: p.kappa,
            lambda_ou: p.lambda,
            alpha: p.alpha,
            beta_slope: p.beta,
            gamma: p.gamma,
            ..SimConfig::default()
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn lag_steps(&self) -> usize {
        (self.delta / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("simulation: {m}")));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= 100.0 * self.dt) {
            return bad(format!("horizon {} is shorter than 100 steps of {}", self.horizon, self.dt));
        }
        if !(self.delta >= 0.0) {
            return bad(format!("delta must be nonnegative, got {}", self.delta));
        }
        let ratio = self.delta / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return bad(format!("delta/dt = {ratio} is not an integer"));
        }
        if self.lag_steps() > self.steps() {
            return bad("delta exceeds the horizon".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        for (name, v) in [("kappa", self.kappa), ("lambda_ou", self.lambda_ou), ("alpha", self.alpha), ("beta_slope", self.beta_slope), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.alpha > 0.0 && self.beta_slope > 0.0) {
            return bad("alpha and beta_slope must be positive".into());
        }
        Ok(())
    }

    /// Half-width of the phase-error range inside which `sin(e)/e ≥ 1 − 2γ`.
    pub fn sector_range(&self) -> f64 {
        sector_range(self.gamma)
    }
}

/// Largest `e ∈ (0, π]` with `sin(e)/e ≥ 1 − 2γ`, by bisection.
pub fn sector_range(gamma: f64) -> f64 {
    let floor = 1.0 - 2.0 * gamma;
    if floor <= 0.0 {
        return std::f64::consts::PI;
    }
    if floor >= 1.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid.sin() / mid >= floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Estimator matrices split for the simulation loop (row-major, flat).
#[derive(Debug, Clone)]
pub struct EstimatorGains {
    pub n: usize,
    pub ac: Vec<f64>,
    /// Measurement gain, the first column of `B̃_c`.
    pub b_meas: Vec<f64>,
    /// Gain on the nonlinearity copy, the second column of `B̃_c` (zero if none).
    pub g_copy: Vec<f64>,
    /// Feedback row `φ̂ = c_out · x̂`.
    pub c_out: Vec<f64>,
    /// Copy-input row `ν̃ = k_copy · x̂` (zero if none).
    pub k_copy: Vec<f64>,
    /// Smoothed-output row `C_a`.
    pub ca: Vec<f64>,
}

fn row(m: &Mat, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn col(m: &Mat, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

impl EstimatorGains {
    /// Single-output, single-measurement estimators with at most one nonlinearity.
    pub fn from_solution(sol: &SynthesisSolution, compact: &CompactPlant) -> Result<Self> {
        Self::from_matrices(&sol.ac, &sol.bc, &sol.cc, compact)
    }

    /// As [`from_solution`](Self::from_solution) for estimator matrices from any source.
    pub fn from_matrices(ac: &Mat, bc: &Mat, cc: &Mat, compact: &CompactPlant) -> Result<Self> {
        let d = &compact.dims;
        if d.m != 1 || d.l != 1 || d.g > 1 {
            return Err(Error::Unsupported(format!(
                "simulation handles m = l = 1 and g ≤ 1 (got m = {}, l = {}, g = {})",
                d.m, d.l, d.g
            )));
        }
        let n = d.n;
        if ac.shape() != (n, n) || bc.shape() != (n, d.l + d.g) || cc.shape() != (d.m + d.g, n) {
            return Err(Error::dim(
                "estimator gains",
                format!("A_c {n}x{n}, B_c {n}x{}, C_c {}x{n}", d.l + d.g, d.m + d.g),
                format!("A_c {:?}, B_c {:?}, C_c {:?}", ac.shape(), bc.shape(), cc.shape()),
            ));
        }
        let mut flat = Vec::with_capacity(n * n);
        for i in 0..n {
            flat.extend(ac.row(i).iter());
        }
        Ok(EstimatorGains {
            n,
            ac: flat,
            b_meas: col(bc, 0),
            g_copy: if d.g == 1 { col(bc, 1) } else { vec![0.0; n] },
            c_out: row(cc, 0),
            k_copy: if d.g == 1 { row(cc, 1) } else { vec![0.0; n] },
            ca: row(&compact.ca, 0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunOutcome {
    /// `φ̂(T) − φ(T)`
    pub filter_error: f64,
    /// `C_a x̂(T) − φ(T − δ)` (or `− φ(T)` without delayed comparison)
    pub smoother_error: f64,
    pub divergent: bool,
    /// Steps where `|φ − φ̂|` left the sector range.
    pub sector_exits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub phi: f64,
    pub phi_hat: f64,
    pub smoothed: f64,
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Per-run generator: ChaCha8 keyed by the master seed, stream = run index.
pub fn run_rng(master_seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index);
    rng
}

/// Noise source for one run: `(dV, dW)` pairs, each `N(0, dt)`.
pub trait NoiseSource {
    fn next_pair(&mut self, sqrt_dt: f64) -> (f64, f64);
}

impl NoiseSource for ChaCha8Rng {
    fn next_pair(&mut self, sqrt_dt: f64) -> (f64, f64) {
        let v: f64 = StandardNormal.sample(self);
        let w: f64 = StandardNormal.sample(self);
        (v * sqrt_dt, w * sqrt_dt)
    }
}

/// Silent source for deterministic checks.
pub struct NoNoise;

impl NoiseSource for NoNoise {
    fn next_pair(&mut self, _: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Integrate one run from `φ(0) = phi0`, `x̂(0) = 0`.
///
/// `trajectory_stride > 0` records every that many steps.
pub fn simulate_with<N: NoiseSource>(
    cfg: &SimConfig,
    gains: &EstimatorGains,
    noise: &mut N,
    phi0: f64,
    trajectory_stride: usize,
) -> (RunOutcome, Vec<TrajectoryPoint>) {
    let n = gains.n;
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let steps = cfg.steps();
    let lag = cfg.lag_steps();
    let two_alpha = 2.0 * cfg.alpha;
    let s2ab = two_alpha * cfg.beta_slope;
    let copy_scale = two_alpha * cfg.gamma;
    let use_copy = cfg.nonlinearity_copy && copy_scale > 0.0;
    let sqrt_kappa = cfg.kappa.sqrt();
    let e_max = cfg.sector_range();

    let mut xh = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut hist = vec![0.0; lag + 1];
    let mut phi = phi0;
    hist[0] = phi;
    let mut exits = 0u64;
    let mut traj = Vec::new();
    let mut divergent = false;

    for k in 0..steps {
        let ph = dot(&gains.c_out, &xh);
        if trajectory_stride > 0 && k % trajectory_stride == 0 {
            traj.push(TrajectoryPoint { t: k as f64 * dt, phi, phi_hat: ph, smoothed: dot(&gains.ca, &xh) });
        }
        if !(ph.abs() <= DIVERGENCE_LIMIT) {
            divergent = true;
            break;
        }
        let e = phi - ph;
        if e.abs() > e_max {
            exits += 1;
        }
        let (dv, dw) = noise.next_pair(sqrt_dt);
        let di = match cfg.measurement {
            Measurement::Homodyne => two_alpha * e.sin() * dt + dw,
            Measurement::Linearized => s2ab * e * dt + dw,
        };
        let dy = (di + s2ab * ph * dt) / s2ab;
        let mu = if use_copy {
            let z = dot(&gains.k_copy, &xh) / copy_scale;
            z.sin() - z
        } else {
            0.0
        };
        for (i, d) in drift.iter_mut().enumerate() {
            *d = dot(&gains.ac[i * n..(i + 1) * n], &xh) + gains.g_copy[i] * mu;
        }
        for i in 0..n {
            xh[i] += drift[i] * dt + gains.b_meas[i] * dy;
        }
        phi += -cfg.lambda_ou * phi * dt + sqrt_kappa * dv;
        hist[(k + 1) % (lag + 1)] = phi;
    }

    let ph = dot(&gains.c_out, &xh);
    let smoothed = dot(&gains.ca, &xh);
    if !(ph.is_finite() && smoothed.is_finite()) {
        divergent = true;
    }
    if trajectory_stride > 0 && !divergent {
        traj.push(TrajectoryPoint { t: steps as f64 * dt, phi, phi_hat: ph, smoothed });
    }
    // hist[(steps + 1) % (lag + 1)] holds φ at step steps − lag
    let phi_lagged = hist[(steps + 1) % (lag + 1)];
    let target = if cfg.delayed_comparison { phi_lagged } else { phi };
    (
        RunOutcome {
            filter_error: ph - phi,
            smoother_error: smoothed - target,
            divergent,
            sector_exits: exits,
        },
        traj,
    )
}

/// One seeded run of the homodyne loop.
pub fn simulate_run(cfg: &SimConfig, gains: &EstimatorGains, run_index: u64) -> RunOutcome {
    let mut rng = run_rng(cfg.master_seed, run_index);
    simulate_with(cfg, gains, &mut rng, 0.0, 0).0
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub estimator: EstimatorMode,
    pub error_covariance: f64,
    #[serde(serialize_with = "ser_f64_lossless")]
    pub standard_error: f64,
    pub runs_requested: usize,
    pub runs_completed: usize,
    pub divergent_runs: usize,
    pub healthy: bool,
    pub runs_with_sector_exits: usize,
    pub master_seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub delta: f64,
    pub delayed_comparison: bool,
    pub copy_nonlinearity: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
}

pub fn summarize(cfg: &SimConfig, mode: EstimatorMode, outcomes: &[RunOutcome]) -> MonteCarloReport {
    let errors: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.divergent)
        .map(|o| match mode {
            EstimatorMode::Ngcf => o.filter_error,
            EstimatorMode::RobustSmoother => o.smoother_error,
        })
        .collect();
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let k = sq.len();
    let mean = if k > 0 { sq.iter().sum::<f64>() / k as f64 } else { f64::NAN };
    let se = if k >= 2 {
        let var = sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let divergent = outcomes.len() - k;
    MonteCarloReport {
        estimator: mode,
        error_covariance: mean,
        standard_error: se,
        runs_requested: outcomes.len(),
        runs_completed: k,
        divergent_runs: divergent,
        healthy: k > 0 && (divergent as f64) <= HEALTHY_DIVERGENCE_FRACTION * outcomes.len() as f64,
        runs_with_sector_exits: outcomes.iter().filter(|o| o.sector_exits > 0).count(),
        master_seed: cfg.master_seed,
        dt: cfg.dt,
        horizon: cfg.horizon,
        delta: cfg.delta,
        delayed_comparison: cfg.delayed_comparison,
        copy_nonlinearity: if cfg.nonlinearity_copy && cfg.gamma > 0.0 {
            "sin(nu/(2*alpha*gamma)) - nu/(2*alpha*gamma)"
        } else {
            "none"
        },
        samples: cfg.keep_samples.then_some(errors),
    }
}

/// All runs of `cfg`, in run-index order.
pub fn run_all(cfg: &SimConfig, gains: &EstimatorGains) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    if gains.n == 0 {
        return Err(Error::Config("estimator has no states".into()));
    }
    Ok((0..cfg.runs as u64).into_par_iter().map(|i| simulate_run(cfg, gains, i)).collect())
}

pub fn monte_carlo(cfg: &SimConfig, gains: &EstimatorGains) -> Result<MonteCarloReport> {
    let outcomes = run_all(cfg, gains)?;
    Ok(summarize(cfg, cfg.estimator, &outcomes))
}

/// Both filter and smoother statistics from one set of runs.
pub fn monte_carlo_both(cfg: &SimConfig, gains: &EstimatorGains) -> Result<(MonteCarloReport, MonteCarloReport)> {
    let outcomes = run_all(cfg, gains)?;
    Ok((summarize(cfg, EstimatorMode::Ngcf, &outcomes), summarize(cfg, EstimatorMode::RobustSmoother, &outcomes)))
}

/// A linear, fully observable check case: an OU phase with first-order Padé
/// delay states and a steady-state Kalman estimator of the augmented state.
/// The Lyapunov covariance of this loop is exact up to the Euler step.
#[derive(Debug, Clone)]
pub struct SanityModel {
    pub compact: CompactPlant,
    pub ac: Mat,
    pub bc: Mat,
    pub cc: Mat,
    pub config: SimConfig,
}

impl SanityModel {
    pub fn new(runs: usize, master_seed: u64) -> Result<Self> {
        let params = PhaseParams { lambda: 1e3, kappa: 1e3, alpha: 50.0, beta: 1.0, gamma: 0.0 };
        let delta = 2e-4;
        let plant = UncertainPlant::phase_tracking(&params);
        let compact = CompactPlant::from_plant(&plant, &pade_delay(1, delta)?)?;
        let c2 = &compact.c2t;
        let rn = &compact.d21t * compact.d21t.transpose();
        let rn_inv = rn.clone().try_inverse().ok_or_else(|| Error::Numerical("singular measurement noise".into()))?;
        let prob = RiccatiProblem::new(
            compact.ap.transpose(),
            &compact.bp1 * compact.bp1.transpose(),
            -(c2.transpose() * &rn_inv * c2),
        )?;
        let y = numkernel::solve_care(&prob)?.x;
        let bc = &y * c2.transpose() * &rn_inv;
        let ac = &compact.ap - &bc * c2;
        let cc = compact.cp0.clone();
        let config = SimConfig {
            dt: 1e-6,
            horizon: 5e-3,
            delta,
            runs,
            master_seed,
            measurement: Measurement::Linearized,
            nonlinearity_copy: false,
            ..SimConfig::with_params(&params)
        };
        Ok(SanityModel { compact, ac, bc, cc, config })
    }

    pub fn gains(&self) -> Result<EstimatorGains> {
        EstimatorGains::from_matrices(&self.ac, &self.bc, &self.cc, &self.compact)
    }

    pub fn analytic(&self) -> Result<CovarianceReport> {
        let cl = build_closed_loop_from(&self.compact, &self.ac, &self.bc, &self.cc, &Mat::zeros(0, 0), false)?;
        smoothed_error_covariance(&cl, self.config.delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_gains() -> EstimatorGains {
        EstimatorGains {
            n: 1,
            ac: vec![-1e4],
            b_meas: vec![5e3],
            g_copy: vec![0.0],
            c_out: vec![1.0],
            k_copy: vec![0.0],
            ca: vec![1.0],
        }
    }

    #[test]
    fn sector_range_for_gamma_04() {
        let e = sector_range(0.4);
        assert!((e.sin() / e - 0.2).abs() < 1e-12);
        assert!(e > 2.5 && e < 2.6);
        assert_eq!(sector_range(0.0), 0.0);
    }

    #[test]
    fn noiseless_loop_stays_at_zero() {
        let cfg = SimConfig { kappa: 0.0, horizon: 1e-5, ..SimConfig::default() };
        let (o, traj) = simulate_with(&cfg, &scalar_gains(), &mut NoNoise, 0.0, 10);
        assert_eq!((o.filter_error, o.smoother_error), (0.0, 0.0));
        assert!(traj.iter().all(|p| p.phi == 0.0 && p.phi_hat == 0.0));
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = SimConfig { horizon: 1e-5, ..SimConfig::default() };
        let a = simulate_run(&cfg, &scalar_gains(), 7);
        let b = simulate_run(&cfg, &scalar_gains(), 7);
        assert_eq!(a.filter_error.to_bits(), b.filter_error.to_bits());
        assert_ne!(a.filter_error, simulate_run(&cfg, &scalar_gains(), 8).filter_error);
    }

    #[test]
    fn single_run_has_infinite_standard_error() {
        let cfg = SimConfig { horizon: 1e-5, runs: 1, ..SimConfig::default() };
        let r = monte_carlo(&cfg, &scalar_gains()).unwrap();
        let o = simulate_run(&cfg, &scalar_gains(), 0);
        assert_eq!(r.error_covariance, o.smoother_error * o.smoother_error);
        assert!(r.standard_error.is_infinite());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { horizon: 50e-8, ..SimConfig::default() },
            SimConfig { delta: 3.15e-6 + 0.3e-8, ..SimConfig::default() },
            SimConfig { runs: 0, ..SimConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        assert!(SimConfig::default().validate().is_ok());
    }

    #[test]
    fn divergence_is_flagged() {
        let mut g = scalar_gains();
        g.ac = vec![1e7];
        let cfg = SimConfig { horizon: 1e-5, runs: 4, ..SimConfig::default() };
        let r = monte_carlo(&cfg, &g).unwrap();
        assert_eq!(r.divergent_runs, 4);
        assert!(!r.healthy);
    }
}
