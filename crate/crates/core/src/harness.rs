//! Monte Carlo orchestration and the verification checks that tie
//! ensemble estimates to deterministic values.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::ensemble::{try_map_indexed, McConfig};
use crate::error::{Error, Result};
use crate::information::{self, EnsembleSeries, Provenance, ShattenDecomposition};
use crate::linalg::{self, c, inner, json, CMatrix, DensityMatrix, C64};
use crate::model::{fixtures, MeasurementModel, RawModel};
use crate::semigroup::{self, TestFunction};
use crate::stats::{summarize, Accumulator};
use crate::trajectory::{self, Increment, Mode, RngStream, StepNoise, TimeGrid, Walker};

/// Absolute slack for comparisons that are exact up to rounding.
pub const FLOAT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Linear walker under the reference measure.
    #[serde(alias = "q")]
    Q,
    /// Normalized walker under the physical measure.
    #[serde(alias = "p")]
    P,
    /// Physical walker from `initial_state`, linear walker from
    /// `reference_state` driven by the same output.
    Coupled,
}

impl FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" | "Q" => Ok(RunMode::Q),
            "p" | "P" => Ok(RunMode::P),
            "coupled" => Ok(RunMode::Coupled),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// A named preset or an explicit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Preset(String),
    Matrix(#[serde(with = "json")] CMatrix),
}

impl StateSpec {
    /// Presets: `excited`, `ground`, `plus`, `mixed` (maximally mixed),
    /// `basis:i`.
    pub fn resolve(&self, d: usize) -> Result<DensityMatrix> {
        match self {
            StateSpec::Matrix(m) => DensityMatrix::new(m.clone()),
            StateSpec::Preset(name) => match name.as_str() {
                "excited" => Ok(DensityMatrix::basis(d, 0)),
                "ground" => Ok(DensityMatrix::basis(d, 1.min(d - 1))),
                "mixed" => Ok(DensityMatrix::maximally_mixed(d)),
                "plus" if d == 2 => Ok(linalg::qubit::plus()),
                other => match other.strip_prefix("basis:").and_then(|i| i.parse::<usize>().ok()) {
                    Some(i) if i < d => Ok(DensityMatrix::basis(d, i)),
                    _ => Err(Error::Config(format!("unknown state preset {other:?}"))),
                },
            },
        }
    }
}

/// Scalar functionals recorded along each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// `||sigma_t|| / ||sigma_0||`.
    Norm,
    LogWeight,
    Y,
    Jumps,
    Entropy,
    PurityDefect,
    MeanDrift,
    /// Integrand of `I_t(P|Q)`.
    RateQ,
    /// `D1 - D2 - D3`.
    EntropyRate,
    /// `p1 - p2 - p3`.
    PurityRate,
    /// `ln(w^a / w)` of a coupled pair.
    LogRatio,
    /// Integrand of `I_t(P^a|P)` of a coupled pair.
    PairRate,
    Rho { i: usize, j: usize, imag: bool },
}

pub const FUNCTIONAL_NAMES: &[&str] = &[
    "norm",
    "logWeight",
    "y",
    "jumps",
    "entropy",
    "purityDefect",
    "meanDrift",
    "rateQ",
    "entropyRate",
    "purityRate",
    "logRatio",
    "pairRate",
    "rho_re_<i>_<j>",
    "rho_im_<i>_<j>",
];

impl FromStr for Functional {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "norm" => Functional::Norm,
            "logWeight" => Functional::LogWeight,
            "y" => Functional::Y,
            "jumps" => Functional::Jumps,
            "entropy" => Functional::Entropy,
            "purityDefect" => Functional::PurityDefect,
            "meanDrift" => Functional::MeanDrift,
            "rateQ" => Functional::RateQ,
            "entropyRate" => Functional::EntropyRate,
            "purityRate" => Functional::PurityRate,
            "logRatio" => Functional::LogRatio,
            "pairRate" => Functional::PairRate,
            _ => {
                let parse = |rest: &str, imag| -> Option<Functional> {
                    let (i, j) = rest.split_once('_')?;
                    Some(Functional::Rho { i: i.parse().ok()?, j: j.parse().ok()?, imag })
                };
                let f = if let Some(rest) = s.strip_prefix("rho_re_") {
                    parse(rest, false)
                } else if let Some(rest) = s.strip_prefix("rho_im_") {
                    parse(rest, true)
                } else {
                    None
                };
                return f.ok_or_else(|| Error::Config(format!("unknown functional {s:?}")));
            }
        })
    }
}

impl Functional {
    fn needs_pair(self) -> bool {
        matches!(self, Functional::LogRatio | Functional::PairRate)
    }

    /// State functionals read `lead`; pair functionals also read `follower`.
    fn eval(self, lead: &Walker, follower: Option<&Walker>, jumps: u64) -> Result<f64> {
        let model = lead.model();
        let rho = || linalg::hermitize(&lead.rho());
        Ok(match self {
            Functional::Norm => lead.log_weight().exp(),
            Functional::LogWeight => lead.log_weight(),
            Functional::Y => lead.y(),
            Functional::Jumps => jumps as f64,
            Functional::Entropy => information::entropy_of(&rho())?,
            Functional::PurityDefect => information::purity_defect_of(&rho()),
            Functional::MeanDrift => model.mean_drift(&rho()),
            Functional::RateQ => information::classical_rel_entropy_rate_q_at(model, &rho()),
            Functional::EntropyRate => information::entropy_rate(model, &rho())?,
            Functional::PurityRate => {
                let t = information::purity_rate_terms(model, &rho())?;
                t.p1 - t.p2 - t.p3
            }
            Functional::LogRatio => lead.log_weight() - follower.ok_or(Error::WrongMode)?.log_weight(),
            Functional::PairRate => {
                let f = follower.ok_or(Error::WrongMode)?;
                information::classical_rel_entropy_pair_rate_at(model, &rho(), &linalg::hermitize(&f.rho()))
            }
            Functional::Rho { i, j, imag } => {
                let r = lead.rho();
                let x = r[(i, j)];
                if imag {
                    x.im
                } else {
                    x.re
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
    pub initial_state: StateSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_state: Option<StateSpec>,
    pub t_max: f64,
    pub dt: f64,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub mode: RunMode,
    pub outputs: Vec<String>,
    /// Observation every `snapshot_stride` steps.
    pub snapshot_stride: usize,
    /// 0 uses the global pool. Does not affect results.
    #[serde(default)]
    pub workers: usize,
}

impl RunConfig {
    pub fn new(initial_state: StateSpec, t_max: f64, dt: f64, n: usize, seed: u64, mode: RunMode) -> Self {
        RunConfig {
            model_path: None,
            initial_state,
            reference_state: None,
            t_max,
            dt,
            n_trajectories: n,
            master_seed: seed,
            mode,
            outputs: vec!["norm".into()],
            snapshot_stride: 1,
            workers: 0,
        }
    }

    pub fn with_outputs(mut self, outputs: &[&str]) -> Self {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn with_reference(mut self, reference: StateSpec) -> Self {
        self.reference_state = Some(reference);
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn functionals(&self) -> Result<Vec<Functional>> {
        self.outputs.iter().map(|s| s.parse()).collect()
    }

    /// Observation steps `0, stride, 2 stride, ..` plus the last step.
    pub fn observation_steps(&self) -> Result<Vec<usize>> {
        let grid = TimeGrid::new(self.t_max, self.dt)?;
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot stride must be at least 1".into()));
        }
        let mut steps: Vec<usize> = (0..=grid.n_steps).step_by(self.snapshot_stride).collect();
        if *steps.last().unwrap() != grid.n_steps {
            steps.push(grid.n_steps);
        }
        Ok(steps)
    }

    pub fn validate(&self, model: &MeasurementModel) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::Config("need at least one trajectory".into()));
        }
        let fs = self.functionals()?;
        for f in &fs {
            if let Functional::Rho { i, j, .. } = f {
                if *i >= model.dim() || *j >= model.dim() {
                    return Err(Error::Config(format!("matrix element ({i},{j}) out of range")));
                }
            }
            if f.needs_pair() && self.mode != RunMode::Coupled {
                return Err(Error::WrongMode);
            }
        }
        if self.mode == RunMode::Coupled && self.reference_state.is_none() {
            return Err(Error::Config("coupled mode needs a reference state".into()));
        }
        let mode = if self.mode == RunMode::Q { Mode::Linear } else { Mode::Physical };
        TimeGrid::new(self.t_max, self.dt)?.check_rates(model, mode)?;
        if self.mode == RunMode::Coupled {
            trajectory::check_rates(model, Mode::Linear, self.dt)?;
        }
        self.observation_steps()?;
        Ok(())
    }
}

/// Per-path samples: `paths[i][time * n_functionals + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSamples {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub paths: Vec<Vec<f64>>,
}

impl EnsembleSamples {
    pub fn get(&self, path: usize, time: usize, functional: usize) -> f64 {
        self.paths[path][time * self.names.len() + functional]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, time: usize, functional: usize) -> Vec<f64> {
        (0..self.paths.len()).map(|p| self.get(p, time, functional)).collect()
    }

    /// Index-ordered reduction, so independent of how paths were produced.
    pub fn summarize(&self, provenance: Provenance) -> EnsembleSeries {
        let nf = self.names.len();
        let values = (0..nf)
            .map(|f| {
                (0..self.times.len())
                    .map(|t| {
                        let mut acc = Accumulator::new();
                        acc.extend(self.paths.iter().map(|p| p[t * nf + f]));
                        acc.summary()
                    })
                    .collect()
            })
            .collect();
        EnsembleSeries { times: self.times.clone(), names: self.names.clone(), values, provenance }
    }
}

fn run_path(
    model: &MeasurementModel,
    cfg: &RunConfig,
    init: &DensityMatrix,
    reference: Option<&DensityMatrix>,
    obs: &[usize],
    fs: &[Functional],
    index: u64,
) -> Result<Vec<f64>> {
    let mut rng = RngStream::new(cfg.master_seed, index);
    let mode = if cfg.mode == RunMode::Q { Mode::Linear } else { Mode::Physical };
    let mut lead = Walker::new(model, mode, init, cfg.dt)?;
    let mut follower = match reference {
        Some(r) => Some(Walker::new(model, Mode::Linear, r, cfg.dt)?),
        None => None,
    };
    let mut noise = StepNoise::default();
    let mut inc = Increment::default();
    let mut jumps = 0u64;
    let mut out = Vec::with_capacity(obs.len() * fs.len());
    for &target in obs {
        while lead.step_index() < target {
            lead.step(&mut rng, &mut noise, &mut inc);
            jumps += inc.jumps.iter().filter(|&&j| j).count() as u64;
            if let Some(f) = follower.as_mut() {
                f.apply(&inc);
            }
        }
        for f in fs {
            out.push(f.eval(&lead, follower.as_ref(), jumps)?);
        }
    }
    Ok(out)
}

/// Trajectory `i` uses `RngStream(master_seed, i)`.
pub fn run_samples(model: &MeasurementModel, cfg: &RunConfig) -> Result<EnsembleSamples> {
    cfg.validate(model)?;
    let fs = cfg.functionals()?;
    let obs = cfg.observation_steps()?;
    let init = cfg.initial_state.resolve(model.dim())?;
    let reference = match (&cfg.reference_state, cfg.mode) {
        (Some(r), RunMode::Coupled) => Some(r.resolve(model.dim())?),
        _ => None,
    };
    if let Some(r) = &reference {
        if !trajectory::support_contained(&init, r, information::SUPP_TOL) {
            return Err(Error::SupportViolation);
        }
    }
    let paths = try_map_indexed(cfg.n_trajectories, cfg.workers, |i| {
        run_path(model, cfg, &init, reference.as_ref(), &obs, &fs, i)
    })?;
    Ok(EnsembleSamples {
        times: obs.iter().map(|&s| s as f64 * cfg.dt).collect(),
        names: cfg.outputs.clone(),
        paths,
    })
}

pub fn run_ensemble(model: &MeasurementModel, cfg: &RunConfig) -> Result<EnsembleSeries> {
    let samples = run_samples(model, cfg)?;
    Ok(samples.summarize(Provenance {
        model_hash: model.fingerprint(),
        seed: cfg.master_seed,
        dt: cfg.dt,
        n: cfg.n_trajectories,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub details: BTreeMap<String, f64>,
}

impl Check {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Check { name: name.into(), statistic, threshold, passed: statistic <= threshold, details: BTreeMap::new() }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        let v = if passed { 0.0 } else { 1.0 };
        Check { name: name.into(), statistic: v, threshold: 0.0, passed, details: BTreeMap::new() }
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    pub fn failed(name: impl Into<String>, err: &Error) -> Self {
        Check::flag(format!("{}: {err}", name.into()), false)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn new() -> Self {
        VerificationReport { passed: true, checks: Vec::new() }
    }

    pub fn from_checks(checks: Vec<Check>) -> Self {
        let mut r = Self::new();
        r.extend(checks);
        r
    }

    pub fn push(&mut self, check: Check) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn extend(&mut self, checks: impl IntoIterator<Item = Check>) {
        for ch in checks {
            self.push(ch);
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// `|mean| <= 3 SE + C dt`, where `C dt = 2 |mean(coarse - fine)|` comes
/// from paired walkers at `dt` and `dt / 2`.
pub fn refined_check(name: impl Into<String>, coarse: &[f64], fine: &[f64], target: f64) -> Result<Check> {
    let est = summarize(coarse.iter().copied())?;
    let diff = summarize(coarse.iter().zip(fine).map(|(a, b)| a - b))?;
    let cdt = 2.0 * diff.mean.abs();
    let dev = (est.mean - target).abs();
    Ok(Check::at_most(name, dev, 3.0 * est.se + cdt + FLOAT_SLACK)
        .detail("mean", est.mean)
        .detail("target", target)
        .detail("se", est.se)
        .detail("cdt", cdt)
        .detail("n", est.n as f64))
}

fn complex_refined_check(name: String, coarse: &[C64], fine: &[C64], target: C64) -> Result<Check> {
    let re = summarize(coarse.iter().map(|z| z.re))?;
    let im = summarize(coarse.iter().map(|z| z.im))?;
    let dre = summarize(coarse.iter().zip(fine).map(|(a, b)| a.re - b.re))?;
    let dim = summarize(coarse.iter().zip(fine).map(|(a, b)| a.im - b.im))?;
    let se = re.se.hypot(im.se);
    let cdt = 2.0 * dre.mean.hypot(dim.mean);
    let dev = (c(re.mean, im.mean) - target).norm();
    Ok(Check::at_most(name, dev, 3.0 * se + cdt + FLOAT_SLACK)
        .detail("re", re.mean)
        .detail("im", im.mean)
        .detail("targetRe", target.re)
        .detail("targetIm", target.im)
        .detail("se", se)
        .detail("cdt", cdt)
        .detail("n", re.n as f64))
}

/// Runs a fine (`dt / 2`) and a coarse (`dt`) walker on shared draws for
/// each path and returns `(fine, coarse)` observations.
pub fn refinement_samples<T, F>(
    model: &MeasurementModel,
    mode: Mode,
    rho: &DensityMatrix,
    k: Option<&TestFunction>,
    times: &[f64],
    mc: &McConfig,
    observe: F,
) -> Result<Vec<(Vec<T>, Vec<T>)>>
where
    T: Send,
    F: Fn(&Walker) -> T + Sync + Send,
{
    try_map_indexed(mc.n, mc.workers, |i| {
        let mut rng = RngStream::new(mc.seed, i);
        let mut fine = Walker::new(model, mode, rho, 0.5 * mc.dt)?;
        let mut coarse = Walker::new(model, mode, rho, mc.dt)?;
        if let Some(k) = k {
            fine = fine.with_test_function(k.clone());
            coarse = coarse.with_test_function(k.clone());
        }
        trajectory::observe_refinement(&mut fine, &mut coarse, &mut rng, times, &observe)
    })
}

/// `E_Q[Phi_t(k) <a, sigma_t>]` against `<a, G_t(k)[rho]>` at every
/// breakpoint after 0, for every observable.
pub fn verify_gphi(
    model: &MeasurementModel,
    rho: &DensityMatrix,
    k: &TestFunction,
    observables: &[(String, CMatrix)],
    mc: &McConfig,
) -> Result<VerificationReport> {
    let times: Vec<f64> = k.breakpoints()[1..].to_vec();
    let samples = refinement_samples(model, Mode::Linear, rho, Some(k), &times, mc, |w| {
        observables.iter().map(|(_, a)| w.phi() * w.weighted_expectation(a)).collect::<Vec<C64>>()
    })?;
    let mut report = VerificationReport::new();
    for (j, &t) in times.iter().enumerate() {
        let piece = TestFunction::new(k.breakpoints()[..=j + 1].to_vec(), k.values()[..=j].to_vec())?;
        let g = semigroup::characteristic_operator(model, rho, &piece)?;
        for (o, (name, a)) in observables.iter().enumerate() {
            let fine: Vec<C64> = samples.iter().map(|(f, _)| f[j][o]).collect();
            let coarse: Vec<C64> = samples.iter().map(|(_, c)| c[j][o]).collect();
            let check = complex_refined_check(format!("gphi a={name} t={t}"), &coarse, &fine, inner(a, &g))?;
            report.push(check.detail("t", t).detail("dt", mc.dt));
        }
    }
    Ok(report)
}

/// Law of the number of jumps in `[0, t]` for a model whose only jump
/// amplitude is `z = 1` and with `r = 0`: inverse DFT of
/// `E[exp(i theta N_t)]` over `m` points, truncated to `0..m`.
pub fn jump_count_law(model: &MeasurementModel, rho: &DensityMatrix, t: f64, m: usize) -> Result<Vec<f64>> {
    if model.amplitudes().len() != 1 || model.amplitudes()[0].z != 1.0 || model.r() != 0.0 {
        return Err(Error::Config("jump-count law needs a single z = 1 amplitude and r = 0".into()));
    }
    let shift = model.c() - model.compensator_drift();
    let chi: Vec<C64> = (0..m)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            // Y_t = N_t + shift t
            let v = semigroup::increment_characteristic(model, rho, theta, t)?;
            Ok(v * C64::from_polar(1.0, -theta * shift * t))
        })
        .collect::<Result<_>>()?;
    Ok((0..m)
        .map(|n| {
            let s: C64 = chi
                .iter()
                .enumerate()
                .map(|(j, x)| x * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * n) as f64 / m as f64))
                .sum();
            (s.re / m as f64).max(0.0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
}

/// Pearson test of `counts` against `probs`; trailing bins are pooled so
/// that every expected count is at least 5.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> Result<ChiSquare> {
    let n: u64 = counts.iter().sum();
    let len = counts.len().max(probs.len());
    let p = |i: usize| probs.get(i).copied().unwrap_or(0.0);
    let o = |i: usize| counts.get(i).copied().unwrap_or(0);
    let (mut observed, mut expected) = (Vec::new(), Vec::new());
    let (mut ob, mut ex) = (0u64, 0.0);
    for i in 0..len {
        ob += o(i);
        ex += p(i) * n as f64;
        if ex >= 5.0 {
            observed.push(ob);
            expected.push(ex);
            ob = 0;
            ex = 0.0;
        }
    }
    // tail mass beyond the table joins the last bin
    let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0) * n as f64;
    match (observed.last_mut(), expected.last_mut()) {
        (Some(lo), Some(le)) => {
            *lo += ob;
            *le += ex + tail;
        }
        _ => return Err(Error::TooFewSamples { needed: 5, got: n as usize }),
    }
    if observed.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: observed.len() });
    }
    let statistic: f64 = observed.iter().zip(&expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    let dof = observed.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Config(e.to_string()))?;
    Ok(ChiSquare { statistic, dof, p_value: 1.0 - dist.cdf(statistic), observed, expected })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Quick,
    Full,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Scale::Quick),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("unknown scale {s:?}"))),
        }
    }
}

impl Scale {
    pub fn trajectories(self) -> usize {
        match self {
            Scale::Quick => 1000,
            Scale::Full => 10_000,
        }
    }

    pub fn random_samples(self) -> usize {
        match self {
            Scale::Quick => 20,
            Scale::Full => 100,
        }
    }

    pub fn mc(self, seed: u64) -> McConfig {
        McConfig::new(self.trajectories(), 1e-3, seed)
    }
}

/// Haar-free random density matrix `G G^dag / Tr` with Gaussian `G`.
pub fn random_density(d: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let g = random_matrix(d, rng);
    let m = &g * g.adjoint();
    let tr = linalg::trace(&m).re;
    DensityMatrix::new(linalg::hermitize(&m.unscale(tr))).expect("Gram matrix is a state")
}

pub fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im)
    })
}

/// Acceptance criteria, one function per criterion, each returning its
/// checks. Deterministic ones ignore the scale.
pub mod criteria {
    use super::*;
    use crate::information::{
        mutual_entropy_report, quantum_relative_entropy, shatten_decompose, von_neumann_entropy,
    };
    use crate::linalg::qubit::{excited, plus, sigma_z};

    fn fixture_states() -> Vec<(&'static str, DensityMatrix)> {
        vec![("excited", excited()), ("plus", plus()), ("mixed", fixtures::mixed_state())]
    }

    /// 1. `K(0) = L` entrywise and `Tr L[tau] = 0`.
    pub fn generator_consistency(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (name, m) in fixtures::all() {
            let diff = linalg::max_abs_diff(&m.generator_k_superop(0.0).matrix, &m.liouvillian_superop().matrix);
            out.push(Check::at_most(format!("K(0)=L {name}"), diff, 1e-14));
            let mut worst: f64 = 0.0;
            for _ in 0..scale.random_samples() {
                let tau = random_matrix(m.dim(), &mut rng);
                let tr = linalg::trace(&m.liouvillian(&tau)).norm();
                worst = worst.max(tr / linalg::trace_norm(&tau));
            }
            out.push(Check::at_most(format!("Tr L[tau] {name}"), worst, 1e-12));
        }
        out
    }

    /// 2. Trace and positivity of `exp(tL)[rho]`; decay of MODEL-D.
    pub fn semigroup_properties() -> Vec<Check> {
        let mut out = Vec::new();
        let times = [0.1, 1.0, 10.0];
        for (name, m) in fixtures::all() {
            let (mut tr_err, mut min_eig): (f64, f64) = (0.0, 0.0);
            for (_, rho) in fixture_states() {
                for &t in &times {
                    let x = semigroup::propagator(&m, t).map(|u| u.apply(rho.matrix()));
                    match x {
                        Ok(x) => {
                            tr_err = tr_err.max((linalg::trace(&x).re - 1.0).abs());
                            min_eig = min_eig.min(linalg::eigh(&linalg::hermitize(&x)).0[0]);
                        }
                        Err(e) => return vec![Check::failed(format!("semigroup {name}"), &e)],
                    }
                }
            }
            out.push(Check::at_most(format!("trace exp(tL) {name}"), tr_err, 1e-10));
            out.push(Check::at_most(format!("psd exp(tL) {name}"), -min_eig, 1e-10));
        }
        let m = fixtures::model_d();
        match semigroup::propagator(&m, 1.0) {
            Ok(u) => {
                let pop = u.apply(excited().matrix())[(0, 0)].re;
                out.push(Check::at_most("MODEL-D decay at t=1", (pop - (-1f64).exp()).abs(), 1e-8).detail("pop", pop));
            }
            Err(e) => out.push(Check::failed("MODEL-D decay", &e)),
        }
        out
    }

    /// 3. A two-piece functional equals the composition of single pieces.
    pub fn factorization() -> Vec<Check> {
        let mut out = Vec::new();
        let (t1, t2, k1, k2) = (0.4, 0.7, 0.8, -1.3);
        let obs = [linalg::identity(2), sigma_z(), linalg::qubit::sigma_x()];
        for (name, m) in [("MODEL-J", fixtures::model_j()), ("MODEL-D", fixtures::model_d())] {
            let rho = fixtures::mixed_state();
            let run = || -> Result<f64> {
                let two = TestFunction::new(vec![0.0, t1, t1 + t2], vec![k1, k2])?;
                let joint = semigroup::characteristic_operator(&m, &rho, &two)?;
                let first = semigroup::characteristic_operator(&m, &rho, &TestFunction::constant(k1, t1)?)?;
                let composed = m.generator_k_superop(k2).exp(t2)?.apply(&first);
                Ok(obs.iter().map(|a| (inner(a, &joint) - inner(a, &composed)).norm()).fold(0.0, f64::max))
            };
            match run() {
                Ok(d) => out.push(Check::at_most(format!("factorization {name}"), d, 1e-9)),
                Err(e) => out.push(Check::failed(format!("factorization {name}"), &e)),
            }
        }
        out
    }

    /// 4. `E_Q ||sigma_t|| = 1`.
    pub fn martingale(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        for (seed, (name, m)) in fixtures::all().into_iter().enumerate() {
            let cfg = RunConfig::new(StateSpec::Matrix(fixtures::mixed_state().into_matrix()), 1.0, 1e-3, scale.trajectories(), 100 + seed as u64, RunMode::Q)
                .with_stride(500);
            match run_ensemble(&m, &cfg) {
                Ok(series) => {
                    let norm = series.get("norm").unwrap();
                    for (ti, &t) in series.times.iter().enumerate().skip(1) {
                        let e = norm[ti];
                        out.push(
                            Check::at_most(format!("martingale {name} t={t}"), (e.mean - 1.0).abs(), 3.0 * e.se + FLOAT_SLACK)
                                .detail("mean", e.mean)
                                .detail("se", e.se),
                        );
                    }
                }
                Err(e) => out.push(Check::failed(format!("martingale {name}"), &e)),
            }
        }
        out
    }

    /// 5. Characteristic functional from trajectories.
    pub fn gphi(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let obs = vec![("1".to_string(), linalg::identity(2)), ("sz".to_string(), sigma_z())];
        let models = [("MODEL-0", fixtures::model_0()), ("MODEL-D", fixtures::model_d()), ("MODEL-J", fixtures::model_j())];
        for (mi, (name, m)) in models.iter().enumerate() {
            for (ki, kv) in [0.0, 1.0].into_iter().enumerate() {
                let run = || -> Result<VerificationReport> {
                    let k = TestFunction::new(vec![0.0, 0.5, 1.0], vec![kv, kv])?;
                    verify_gphi(m, &fixtures::mixed_state(), &k, &obs, &scale.mc(200 + 2 * mi as u64 + ki as u64))
                };
                match run() {
                    Ok(r) => out.extend(r.checks.into_iter().map(|mut c| {
                        c.name = format!("{name} k={kv} {}", c.name);
                        c
                    })),
                    Err(e) => out.push(Check::failed(format!("gphi {name} k={kv}"), &e)),
                }
            }
        }
        out
    }

    /// 6. `E_P[rho_t] = eta_t` componentwise.
    pub fn demixture(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        for (seed, (name, m)) in [("MODEL-D", fixtures::model_d()), ("MODEL-J", fixtures::model_j())].into_iter().enumerate() {
            let rho = fixtures::mixed_state();
            let run = || -> Result<Vec<Check>> {
                let eta = semigroup::propagate_master(&m, &rho, &[1.0])?.states.remove(0);
                let s = refinement_samples(&m, Mode::Physical, &rho, None, &[1.0], &scale.mc(300 + seed as u64), |w| w.rho())?;
                let mut checks = Vec::new();
                for (i, j, imag) in [(0, 0, false), (0, 1, false), (0, 1, true), (1, 1, false)] {
                    let pick = |x: &CMatrix| if imag { x[(i, j)].im } else { x[(i, j)].re };
                    let fine: Vec<f64> = s.iter().map(|(f, _)| pick(&f[0])).collect();
                    let coarse: Vec<f64> = s.iter().map(|(_, c)| pick(&c[0])).collect();
                    let part = if imag { "im" } else { "re" };
                    checks.push(refined_check(format!("demixture {name} {part}({i},{j})"), &coarse, &fine, pick(eta.matrix()))?);
                }
                Ok(checks)
            };
            match run() {
                Ok(c) => out.extend(c),
                Err(e) => out.push(Check::failed(format!("demixture {name}"), &e)),
            }
        }
        out
    }

    /// 7. Spectral `D2` against its integral form; `D2(pure) = 0`.
    pub fn d2_oracle(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 2..=4 {
            let mut raw = RawModel {
                dim: d,
                h: linalg::zeros(d),
                ls: vec![],
                r_op: random_matrix(d, &mut rng),
                c: 0.0,
                r: 1.0,
                b: 1.0,
                channels: vec![],
            };
            raw.r_op = raw.r_op.unscale(2.0);
            let m = match MeasurementModel::validate(raw) {
                Ok(m) => m,
                Err(e) => return vec![Check::failed("d2 oracle model", &e)],
            };
            let mut worst: f64 = 0.0;
            let mut worst_pure: f64 = 0.0;
            for _ in 0..scale.random_samples() {
                let tau = random_density(d, &mut rng);
                let spectral = information::entropy_rate_d2(&m, tau.matrix());
                let quad = information::entropy_rate_d2_quadrature(&m, tau.matrix());
                match (spectral, quad) {
                    (Ok(s), Ok(q)) => worst = worst.max((s - q).abs() / s.abs().max(1e-12)),
                    (Err(e), _) | (_, Err(e)) => return vec![Check::failed(format!("d2 oracle d={d}"), &e)],
                }
                let psi: Vec<C64> = random_matrix(d, &mut rng).column(0).iter().copied().collect();
                let pure = DensityMatrix::pure(&psi).expect("nonzero vector");
                worst_pure = worst_pure.max(information::entropy_rate_d2(&m, pure.matrix()).unwrap_or(f64::INFINITY).abs());
            }
            out.push(Check::at_most(format!("D2 spectral vs quadrature d={d}"), worst, 1e-6));
            out.push(Check::at_most(format!("D2 pure d={d}"), worst_pure, 1e-12));
        }
        out
    }

    /// Rate identity on paired walkers: the central difference of the path
    /// functional over `[t - h, t + h]` minus the Simpson average of its
    /// rate on the same path has mean 0.
    fn rate_identity(name: &str, m: &MeasurementModel, scale: Scale, seed: u64, value: Functional, rate: Functional) -> Result<Check> {
        let (t, h) = (0.5, 0.025);
        let rho = DensityMatrix::maximally_mixed(2);
        let times = [t - h, t, t + h];
        let s = refinement_samples(m, Mode::Physical, &rho, None, &times, &scale.mc(seed), |w| -> Result<[f64; 2]> {
            Ok([value.eval(w, None, 0)?, rate.eval(w, None, 0)?])
        })?;
        let x = |obs: &Vec<Result<[f64; 2]>>| -> Result<f64> {
            let v: Vec<[f64; 2]> = obs.iter().cloned().collect::<Result<_>>()?;
            Ok((v[2][0] - v[0][0]) / (2.0 * h) - (v[0][1] + 4.0 * v[1][1] + v[2][1]) / 6.0)
        };
        let mut fine = Vec::with_capacity(s.len());
        let mut coarse = Vec::with_capacity(s.len());
        for (f, c) in &s {
            fine.push(x(f)?);
            coarse.push(x(c)?);
        }
        Ok(refined_check(name.to_string(), &coarse, &fine, 0.0)?.detail("t", t).detail("h", h))
    }

    /// 8. `d/dt E[S(rho_t)] = E[D1 - D2 - D3]`.
    pub fn entropy_rate_identity(scale: Scale) -> Vec<Check> {
        let m = fixtures::model_j();
        vec![rate_identity("entropy rate MODEL-J", &m, scale, 800, Functional::Entropy, Functional::EntropyRate)
            .unwrap_or_else(|e| Check::failed("entropy rate", &e))]
    }

    /// Criterion 9: `dp/dt = p1 - p2 - p3`; pure states stay pure under a
    /// quasi-complete model.
    pub fn purity_rate_identity(scale: Scale) -> Vec<Check> {
        let m = fixtures::model_j();
        let mut out = vec![rate_identity("purity rate MODEL-J", &m, scale, 900, Functional::PurityDefect, Functional::PurityRate)
            .unwrap_or_else(|e| Check::failed("purity rate", &e))];
        let d = fixtures::model_d();
        let cfg = RunConfig::new(StateSpec::Preset("plus".into()), 1.0, 1e-3, scale.trajectories(), 901, RunMode::P)
            .with_outputs(&["purityDefect"])
            .with_stride(50);
        match run_samples(&d, &cfg) {
            Ok(s) => {
                let worst = s.paths.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
                out.push(Check::at_most("MODEL-D pure stays pure", worst, 1e-4));
            }
            Err(e) => out.push(Check::failed("MODEL-D pure stays pure", &e)),
        }
        out
    }

    /// 10. Classical relative entropies on MODEL-D.
    pub fn classical_relative_entropies(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let m = fixtures::model_d();
        let n = scale.trajectories();
        // I_t(P|Q): log-weight minus the trapezoid integral of its rate
        for (state, seed) in [("plus", 1000u64), ("mixed", 1001)] {
            let stride = 5;
            let cfg = RunConfig::new(StateSpec::Preset(state.into()), 1.0, 1e-3, n, seed, RunMode::P)
                .with_outputs(&["logWeight", "rateQ"])
                .with_stride(stride);
            match run_samples(&m, &cfg) {
                Ok(s) => {
                    let h = stride as f64 * 1e-3;
                    let last = s.times.len() - 1;
                    let x: Vec<f64> = (0..s.paths.len())
                        .map(|p| {
                            let integral: f64 = (0..last).map(|t| 0.5 * h * (s.get(p, t, 1) + s.get(p, t + 1, 1))).sum();
                            s.get(p, last, 0) - integral
                        })
                        .collect();
                    let logw = summarize(s.column(last, 0)).unwrap();
                    let e = summarize(x).unwrap();
                    out.push(
                        Check::at_most(format!("I(P|Q) vs rate integral {state}"), e.mean.abs(), 3.0 * e.se + FLOAT_SLACK)
                            .detail("logWeight", logw.mean)
                            .detail("se", e.se),
                    );
                }
                Err(e) => out.push(Check::failed("I(P|Q)", &e)),
            }
        }
        // I_t(P^a|P) with rho^a = |+><+|, rho = 1/2
        let cfg = RunConfig::new(StateSpec::Preset("plus".into()), 1.0, 1e-3, n, 1002, RunMode::Coupled)
            .with_reference(StateSpec::Preset("mixed".into()))
            .with_outputs(&["logRatio"])
            .with_stride(100);
        match run_samples(&m, &cfg) {
            Ok(s) => {
                let bound = quantum_relative_entropy(&plus(), &DensityMatrix::maximally_mixed(2)).unwrap();
                let mut worst_drop: f64 = f64::NEG_INFINITY;
                let mut worst_excess: f64 = f64::NEG_INFINITY;
                for t in 1..s.times.len() {
                    let step = summarize((0..s.paths.len()).map(|p| s.get(p, t, 0) - s.get(p, t - 1, 0))).unwrap();
                    worst_drop = worst_drop.max(-step.mean - 2.0 * step.se);
                    let e = summarize(s.column(t, 0)).unwrap();
                    worst_excess = worst_excess.max(e.mean - bound - 3.0 * e.se);
                }
                let last = summarize(s.column(s.times.len() - 1, 0)).unwrap();
                out.push(Check::at_most("I(P^a|P) nondecreasing", worst_drop, FLOAT_SLACK));
                out.push(
                    Check::at_most("I(P^a|P) <= S(rho^a|rho)", worst_excess, FLOAT_SLACK)
                        .detail("valueAtT", last.mean)
                        .detail("se", last.se)
                        .detail("bound", bound),
                );
            }
            Err(e) => out.push(Check::failed("I(P^a|P)", &e)),
        }
        out
    }

    /// 11. Mutual-entropy report on MODEL-D from the maximally mixed state.
    pub fn mutual_entropy(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let m = fixtures::model_d();
        let rho = DensityMatrix::maximally_mixed(2);
        let run = || -> Result<Vec<Check>> {
            let dec = shatten_decompose(&rho)?;
            let s = von_neumann_entropy(&rho)?;
            let mc = scale.mc(1100);
            let r0 = mutual_entropy_report(&m, &rho, &dec, 0.0, &mc)?;
            let v = r0.values;
            let initial = [v.s_sigma_pi, v.s_sigma_pi1, v.s_sigma_pi2, v.s_pi3]
                .iter()
                .map(|x| (x - s).abs())
                .chain([v.s_sigma_pi3, v.s_pi1, v.s_pi2].iter().map(|x| x.abs()))
                .fold(0.0, f64::max);
            let mut checks = vec![Check::at_most("report initial values", initial, 1e-10)];
            let r1 = mutual_entropy_report(&m, &rho, &dec, 1.0, &mc)?;
            for i in 0..3 {
                checks.push(
                    Check::at_most(format!("chain rule {}", i + 1), r1.chain_rule_residuals[i].abs(), 3.0 * r1.chain_rule_se[i] + FLOAT_SLACK)
                        .detail("se", r1.chain_rule_se[i]),
                );
            }
            let mut prev = f64::INFINITY;
            let mut worst_rise: f64 = f64::NEG_INFINITY;
            for j in 0..=20 {
                let t = j as f64 * 0.05;
                let v = sigma_pi3_deterministic(&m, &rho, &dec, t)?;
                worst_rise = worst_rise.max(v - prev);
                prev = v;
            }
            checks.push(Check::at_most("S(Pi3|Pi) nonincreasing", worst_rise, 1e-9));
            let (p2, se) = (r1.values.s_pi2, r1.standard_errors.s_pi2);
            let violation = (-p2 - 3.0 * se).max(p2 - s - 3.0 * se);
            checks.push(Check::at_most("0 <= S(Pi2|Pi) <= S(rho)", violation, FLOAT_SLACK).detail("sPi2", p2).detail("se", se));
            Ok(checks)
        };
        match run() {
            Ok(c) => out.extend(c),
            Err(e) => out.push(Check::failed("mutual entropy", &e)),
        }
        out
    }

    /// `sum_a w_a S(eta^a_t | eta_t)`.
    pub fn sigma_pi3_deterministic(m: &MeasurementModel, rho: &DensityMatrix, dec: &ShattenDecomposition, t: f64) -> Result<f64> {
        let eta = semigroup::propagate_master(m, rho, &[t])?.states.remove(0);
        let mut s = 0.0;
        for (w, a) in dec.weights.iter().zip(&dec.states) {
            let ea = semigroup::propagate_master(m, a, &[t])?.states.remove(0);
            s += w * quantum_relative_entropy(&ea, &eta)?;
        }
        Ok(s)
    }

    /// 12. MODEL-I carries no information.
    pub fn null_model(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let m = fixtures::model_i();
        let rho = fixtures::mixed_state();
        for mode in [RunMode::Q, RunMode::P] {
            let cfg = RunConfig::new(StateSpec::Matrix(rho.matrix().clone()), 1.0, 1e-3, scale.trajectories(), 1200, mode)
                .with_outputs(&["logWeight", "rho_re_0_0", "rho_re_0_1", "rho_im_0_1", "rho_re_1_1"])
                .with_stride(100);
            match run_samples(&m, &cfg) {
                Ok(s) => {
                    let worst_w = s.paths.iter().flat_map(|p| p.chunks(5).map(|c| c[0].abs())).fold(0.0, f64::max);
                    let r = rho.matrix();
                    let target = [r[(0, 0)].re, r[(0, 1)].re, r[(0, 1)].im, r[(1, 1)].re];
                    let worst_rho = s
                        .paths
                        .iter()
                        .flat_map(|p| p.chunks(5).flat_map(|c| c[1..].iter().zip(target).map(|(a, b)| (a - b).abs())))
                        .fold(0.0, f64::max);
                    let last = s.times.len() - 1;
                    let ipq = summarize(s.column(last, 0)).unwrap().mean.abs();
                    out.push(Check::at_most(format!("MODEL-I logWeight == 0 ({mode:?})"), worst_w, 0.0));
                    out.push(Check::at_most(format!("MODEL-I I(P|Q) == 0 ({mode:?})"), ipq, 0.0));
                    out.push(Check::at_most(format!("MODEL-I rho_t == rho ({mode:?})"), worst_rho, 0.0));
                }
                Err(e) => out.push(Check::failed("MODEL-I", &e)),
            }
        }
        let run = || -> Result<f64> {
            let dec = shatten_decompose(&rho)?;
            let mc = McConfig::new(scale.trajectories() / 10, 1e-3, 1201);
            Ok(mutual_entropy_report(&m, &rho, &dec, 1.0, &mc)?.values.s_pi2.abs())
        };
        match run() {
            Ok(v) => out.push(Check::at_most("MODEL-I S(Pi2|Pi) == 0", v, 0.0)),
            Err(e) => out.push(Check::failed("MODEL-I report", &e)),
        }
        out
    }

    /// 13. Bytewise-identical output across worker counts.
    pub fn reproducibility(scale: Scale) -> Vec<Check> {
        let m = fixtures::model_j();
        let base = RunConfig::new(StateSpec::Preset("mixed".into()), 1.0, 1e-3, scale.trajectories(), 1300, RunMode::P)
            .with_outputs(&["y", "jumps", "logWeight", "entropy", "rho_re_0_1"])
            .with_stride(100);
        let render = |w: usize| -> Result<String> {
            let series = run_ensemble(&m, &base.clone().with_workers(w))?;
            let mut csv = Vec::new();
            series.write_csv(&mut csv).map_err(|e| Error::Config(e.to_string()))?;
            Ok(serde_json::to_string(&series).map_err(|e| Error::Config(e.to_string()))? + &String::from_utf8_lossy(&csv))
        };
        match (render(1), render(4), render(8)) {
            (Ok(a), Ok(b), Ok(c)) => vec![Check::flag("identical across 1/4/8 workers", a == b && b == c)],
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => vec![Check::failed("reproducibility", &e)],
        }
    }

    /// MODEL-J from the excited state: jump counts at `t = 1` against the
    /// law from the characteristic function, chi-square at 1%.
    pub fn jump_count_distribution(scale: Scale) -> Vec<Check> {
        let m = fixtures::model_j();
        let run = || -> Result<Check> {
            let cfg = RunConfig::new(StateSpec::Preset("excited".into()), 1.0, 1e-3, scale.trajectories(), 1400, RunMode::P)
                .with_outputs(&["jumps"])
                .with_stride(1000);
            let s = run_samples(&m, &cfg)?;
            let law = jump_count_law(&m, &excited(), 1.0, 64)?;
            let mut counts = vec![0u64; law.len()];
            for x in s.column(s.times.len() - 1, 0) {
                let k = (x as usize).min(law.len() - 1);
                counts[k] += 1;
            }
            let chi = chi_square(&counts, &law)?;
            Ok(Check::at_most("MODEL-J jump counts chi-square", 0.01 - chi.p_value, 0.0)
                .detail("pValue", chi.p_value)
                .detail("statistic", chi.statistic)
                .detail("dof", chi.dof as f64))
        };
        vec![run().unwrap_or_else(|e| Check::failed("jump counts", &e))]
    }

    /// MODEL-0: `Y` is Brownian motion with drift `c`.
    pub fn decoupled_output(scale: Scale) -> Vec<Check> {
        let m = fixtures::model_0();
        let cfg = RunConfig::new(StateSpec::Preset("mixed".into()), 1.0, 1e-3, scale.trajectories() / 10, 1500, RunMode::P)
            .with_outputs(&["y"])
            .with_stride(1000);
        let run = || -> Result<Vec<Check>> {
            let s = run_samples(&m, &cfg)?;
            let y = s.column(1, 0);
            let e = summarize(y.iter().copied())?;
            let n = y.len() as f64;
            let var = y.iter().map(|v| (v - e.mean).powi(2)).sum::<f64>() / (n - 1.0);
            // SE of the sample variance of a Gaussian
            let var_se = m.r().powi(2) * (2.0 / (n - 1.0)).sqrt();
            Ok(vec![
                Check::at_most("MODEL-0 E[Y(1)] = c", (e.mean - m.c()).abs(), 3.0 * e.se).detail("mean", e.mean),
                Check::at_most("MODEL-0 Var[Y(1)] = r^2", (var - m.r().powi(2)).abs(), 3.0 * var_se).detail("var", var),
            ])
        };
        run().unwrap_or_else(|e| vec![Check::failed("MODEL-0 output", &e)])
    }

    /// Information bounds on random pairs: `I_t(P^a|P) <= S(rho^a|rho)`.
    pub fn classical_bounds(scale: Scale) -> Vec<Check> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for (i, (name, m)) in fixtures::all().into_iter().enumerate() {
            let rho = random_density(2, &mut rng);
            let alpha = shatten_decompose(&rho).map(|d| d.states[0].clone());
            let run = || -> Result<Check> {
                let alpha = alpha.clone()?;
                let bound = quantum_relative_entropy(&alpha, &rho)?;
                let cfg = RunConfig::new(StateSpec::Matrix(alpha.matrix().clone()), 0.5, 1e-3, scale.trajectories() / 10, 1600 + i as u64, RunMode::Coupled)
                    .with_reference(StateSpec::Matrix(rho.matrix().clone()))
                    .with_outputs(&["logRatio"])
                    .with_stride(500);
                let s = run_samples(&m, &cfg)?;
                let e = summarize(s.column(1, 0))?;
                Ok(Check::at_most(format!("I(P^a|P) <= S(rho^a|rho) {name}"), e.mean - bound, 3.0 * e.se + FLOAT_SLACK)
                    .detail("value", e.mean)
                    .detail("bound", bound))
            };
            out.push(run().unwrap_or_else(|e| Check::failed(format!("bounds {name}"), &e)));
        }
        out
    }

    /// `D2` of two eigenvalues `eps` apart is close to the merged value.
    pub fn d2_degenerate_continuity() -> Vec<Check> {
        let m = fixtures::model_d();
        let merged = information::entropy_rate_d2(&m, DensityMatrix::maximally_mixed(2).matrix());
        let eps = 1e-6;
        let l = 1.0 / (2.0 + eps);
        let split = information::entropy_rate_d2(&m, &linalg::real_matrix(2, &[l, 0.0, 0.0, l * (1.0 + eps)]));
        match (merged, split) {
            (Ok(a), Ok(b)) => vec![Check::at_most("D2 continuity at degeneracy", (a - b).abs(), 1e-4)],
            (Err(e), _) | (_, Err(e)) => vec![Check::failed("D2 continuity", &e)],
        }
    }

    /// Validation accepts each model; a failure is reported, not raised.
    pub fn validation(models: &[(String, RawModel)]) -> Vec<Check> {
        models
            .iter()
            .map(|(name, raw)| match MeasurementModel::validate(raw.clone()) {
                Ok(_) => Check::flag(format!("validate {name}"), true),
                Err(e) => Check::failed(format!("validate {name}"), &e),
            })
            .collect()
    }
}

fn fixture_raws() -> Vec<(String, RawModel)> {
    vec![
        ("MODEL-0".into(), fixtures::raw_model_0()),
        ("MODEL-I".into(), fixtures::raw_model_i()),
        ("MODEL-D".into(), fixtures::raw_model_d()),
        ("MODEL-J".into(), fixtures::raw_model_j()),
    ]
}

/// The self-test suite over the standard fixtures.
pub fn self_test_suite(scale: Scale) -> VerificationReport {
    self_test_suite_for(&fixture_raws(), scale)
}

/// Validation of `models` followed by the registered checks at `scale`.
/// `Full` adds the rate identities and the report checks.
pub fn self_test_suite_for(models: &[(String, RawModel)], scale: Scale) -> VerificationReport {
    use criteria::*;
    let mut r = VerificationReport::new();
    r.extend(validation(models));
    r.extend(generator_consistency(scale));
    r.extend(semigroup_properties());
    r.extend(factorization());
    r.extend(d2_oracle(scale));
    r.extend(d2_degenerate_continuity());
    r.extend(martingale(scale));
    r.extend(null_model(scale));
    r.extend(decoupled_output(scale));
    r.extend(reproducibility(Scale::Quick));
    if scale == Scale::Full {
        r.extend(gphi(scale));
        r.extend(demixture(scale));
        r.extend(entropy_rate_identity(scale));
        r.extend(purity_rate_identity(scale));
        r.extend(classical_relative_entropies(scale));
        r.extend(mutual_entropy(scale));
        r.extend(jump_count_distribution(scale));
        r.extend(classical_bounds(scale));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::sigma_z;

    #[test]
    fn functional_names_parse() {
        assert_eq!("rho_im_1_0".parse::<Functional>().unwrap(), Functional::Rho { i: 1, j: 0, imag: true });
        assert_eq!("entropy".parse::<Functional>().unwrap(), Functional::Entropy);
        assert!("rho_re_x".parse::<Functional>().is_err());
        assert!("bogus".parse::<Functional>().is_err());
    }

    #[test]
    fn config_validation() {
        let m = fixtures::model_j();
        let ok = RunConfig::new(StateSpec::Preset("mixed".into()), 1.0, 1e-3, 10, 1, RunMode::P);
        assert!(ok.validate(&m).is_ok());
        assert!(RunConfig { n_trajectories: 0, ..ok.clone() }.validate(&m).is_err());
        assert_eq!(ok.clone().with_outputs(&["logRatio"]).validate(&m).unwrap_err(), Error::WrongMode);
        assert!(ok.clone().with_outputs(&["rho_re_2_0"]).validate(&m).is_err());
        assert!(RunConfig { dt: 0.2, ..ok.clone() }.validate(&m).is_err());
        assert_eq!(ok.clone().with_stride(300).observation_steps().unwrap(), vec![0, 300, 600, 900, 1000]);
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), ok);
    }

    #[test]
    fn state_presets() {
        assert_eq!(StateSpec::Preset("plus".into()).resolve(2).unwrap(), linalg::qubit::plus());
        assert_eq!(StateSpec::Preset("basis:2".into()).resolve(3).unwrap(), DensityMatrix::basis(3, 2));
        assert!(StateSpec::Preset("basis:3".into()).resolve(3).is_err());
        let s: StateSpec = serde_json::from_str("[[[1,0],[0,0]],[[0,0],[0,0]]]").unwrap();
        assert_eq!(s.resolve(2).unwrap(), linalg::qubit::excited());
    }

    #[test]
    fn ensemble_is_independent_of_workers() {
        let m = fixtures::model_j();
        let cfg = RunConfig::new(StateSpec::Preset("mixed".into()), 0.2, 1e-3, 64, 9, RunMode::P)
            .with_outputs(&["y", "jumps", "entropy"])
            .with_stride(50);
        let a = run_ensemble(&m, &cfg.clone().with_workers(1)).unwrap();
        let b = run_ensemble(&m, &cfg.with_workers(3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.times.len(), 5);
    }

    #[test]
    fn coupled_mode_needs_nested_support() {
        let m = fixtures::model_d();
        let cfg = RunConfig::new(StateSpec::Preset("plus".into()), 0.1, 1e-3, 4, 1, RunMode::Coupled)
            .with_reference(StateSpec::Preset("excited".into()))
            .with_outputs(&["logRatio"]);
        assert_eq!(run_samples(&m, &cfg).unwrap_err(), Error::SupportViolation);
    }

    #[test]
    fn chi_square_pools_and_scores() {
        let chi = chi_square(&[50, 50], &[0.5, 0.5]).unwrap();
        assert_eq!(chi.statistic, 0.0);
        assert!((chi.p_value - 1.0).abs() < 1e-12);
        let chi = chi_square(&[90, 10, 0, 0], &[0.5, 0.45, 0.04, 0.01]).unwrap();
        assert_eq!(chi.observed, vec![90, 10, 0]);
        assert_eq!(chi.dof, 2);
        assert!(chi.p_value < 1e-6);
    }

    #[test]
    fn decoupled_jump_law_is_poisson_free() {
        // MODEL-I: one channel of rate 1, so N_t is Poisson(t)
        let m = fixtures::model_i();
        let law = jump_count_law(&m, &fixtures::mixed_state(), 2.0, 64).unwrap();
        let mut p = (-2.0f64).exp();
        for (n, &q) in law.iter().take(12).enumerate() {
            assert!((q - p).abs() < 1e-12, "n={n}");
            p *= 2.0 / (n + 1) as f64;
        }
    }

    #[test]
    fn gphi_on_decoupled_model() {
        let m = fixtures::model_0();
        let k = TestFunction::constant(1.0, 0.5).unwrap();
        let obs = vec![("1".to_string(), linalg::identity(2)), ("sz".to_string(), sigma_z())];
        let r = verify_gphi(&m, &fixtures::mixed_state(), &k, &obs, &McConfig::new(400, 1e-2, 3)).unwrap();
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn corrupted_model_is_reported() {
        let mut raw = fixtures::raw_model_d();
        raw.h[(0, 1)] = c(1.0, 0.0);
        let checks = criteria::validation(&[("bad".into(), raw)]);
        assert!(!checks[0].passed);
        assert!(checks[0].name.contains("bad"));
    }
}
