//! Entropy and information functionals of the a posteriori states and of
//! the output probabilities.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::ensemble::{try_map_indexed, McConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, inner, CMatrix, DensityMatrix, Tolerances, C64};
use crate::model::MeasurementModel;
use crate::quadrature;
use crate::semigroup::propagate_master;
use crate::stats::{linear_combination, summarize, Accumulator, Estimate};
use crate::trajectory::{observe_coupled, observe_walk, Mode, RngStream, TimeGrid, Walker};

/// Support threshold for relative entropies.
pub const SUPP_TOL: f64 = 1e-10;
const ZERO_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// `x ln x` with `0 ln 0 = 0`.
pub fn xlnx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn checked_eigh(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    linalg::check_hermitian(m, 1e-10)?;
    let (vals, vecs) = linalg::eigh(m);
    if vals[0] < -PSD_TOL {
        return Err(Error::NotPsd(vals[0]));
    }
    Ok((vals, vecs))
}

/// `-Tr{m ln m}` for a PSD matrix (no trace requirement).
pub fn entropy_of(m: &CMatrix) -> Result<f64> {
    let (vals, _) = checked_eigh(m)?;
    Ok(vals.iter().map(|&l| -xlnx(l)).sum::<f64>().max(0.0))
}

pub fn von_neumann_entropy(tau: &DensityMatrix) -> Result<f64> {
    entropy_of(tau.matrix())
}

/// `Tr{x ln x - x ln y}`, `+inf` when the support of `x` is not inside
/// the support of `y`.
pub fn relative_entropy_of(x: &CMatrix, y: &CMatrix) -> Result<f64> {
    let (xv, _) = checked_eigh(x)?;
    let (yv, yvec) = checked_eigh(y)?;
    let mut kernel_weight = 0.0;
    for (k, &ly) in yv.iter().enumerate() {
        if ly <= SUPP_TOL {
            let v = yvec.column(k);
            kernel_weight += (v.adjoint() * x * v)[(0, 0)].re;
        }
    }
    if kernel_weight > SUPP_TOL {
        return Ok(f64::INFINITY);
    }
    let ln_y = linalg::from_eigen(&yv, &yvec, |l| if l > SUPP_TOL { l.ln() } else { 0.0 });
    let x_ln_x: f64 = xv.iter().map(|&l| xlnx(l)).sum();
    Ok((x_ln_x - inner(x, &ln_y).re).max(0.0))
}

pub fn quantum_relative_entropy(x: &DensityMatrix, y: &DensityMatrix) -> Result<f64> {
    relative_entropy_of(x.matrix(), y.matrix())
}

/// `Tr{rho} - Tr{rho^2}`.
pub fn purity_defect_of(m: &CMatrix) -> f64 {
    linalg::trace(m).re - (m * m).trace().re
}

/// Sample mean and SE of `Tr{rho (1 - rho)}`.
pub fn aposteriori_purity(states: &[CMatrix]) -> Result<Estimate> {
    summarize(states.iter().map(purity_defect_of))
}

fn sqrt_of(m: &CMatrix) -> Result<CMatrix> {
    linalg::matrix_function_on_support(m, f64::sqrt, ZERO_TOL)
}

/// The three purity-rate integrands at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityRateTerms {
    pub p1: f64,
    pub p2: f64,
    /// Structured form (sum of a square and a CP-defect term).
    pub p3: f64,
    /// Expanded form `I j^2 - 2 J[rho^2] + I rho^2`.
    pub p3_expanded: f64,
}

pub fn purity_rate_terms(model: &MeasurementModel, rho: &CMatrix) -> Result<PurityRateTerms> {
    let s = sqrt_of(rho)?;
    let mut p1 = 0.0;
    for l in model.lindblad_ops() {
        let ld = l.adjoint();
        p1 += 2.0 * (rho * &ld * l * rho - &s * &ld * rho * l * &s).trace().re;
    }
    let m = model.mean_drift(rho);
    let b = model.r_sym() - linalg::identity(model.dim()).scale(m);
    let p2 = (&s * &b * rho * &b * &s).trace().re;
    let rho2 = rho * rho;
    let (mut p3, mut p3e) = (0.0, 0.0);
    for a in model.amplitudes() {
        let i = inner(&a.effect, rho).re;
        if i <= ZERO_TOL {
            continue;
        }
        let jr = model.jump_map(a.z, rho)?;
        let sjs = &s * &a.effect * &s;
        let d = &sjs - rho.scale(i);
        p3 += a.mu * ((&d * &d).trace().re + (&jr * &jr).trace().re - (&sjs * &sjs).trace().re) / i;
        let jnorm = jr.unscale(i);
        p3e += a.mu * (i * (&jnorm * &jnorm).trace().re - 2.0 * inner(&a.effect, &rho2).re + i * rho2.trace().re);
    }
    Ok(PurityRateTerms { p1, p2, p3, p3_expanded: p3e })
}

/// Ensemble means of `p1, p2, p3` (structured form).
pub fn purity_rates(model: &MeasurementModel, states: &[CMatrix]) -> Result<(Estimate, Estimate, Estimate)> {
    if states.is_empty() {
        return Err(Error::EmptySample);
    }
    let terms = states.iter().map(|s| purity_rate_terms(model, s)).collect::<Result<Vec<_>>>()?;
    Ok((
        summarize(terms.iter().map(|t| t.p1))?,
        summarize(terms.iter().map(|t| t.p2))?,
        summarize(terms.iter().map(|t| t.p3))?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRateTerms {
    pub d1: f64,
    pub d2: f64,
    pub d2_quadrature: f64,
    pub d3: f64,
}

/// `D1 = sum_j Tr{(L^dag L tau - L tau L^dag) ln tau}`; `+inf` when some
/// `L tau L^dag` has weight outside the support of `tau`.
pub fn entropy_rate_d1(model: &MeasurementModel, tau: &CMatrix) -> Result<f64> {
    if model.lindblad_ops().is_empty() {
        return Ok(0.0);
    }
    let (vals, vecs) = checked_eigh(tau)?;
    let kernel = linalg::from_eigen(&vals, &vecs, |l| if l > SUPP_TOL { 0.0 } else { 1.0 });
    let ln_tau = linalg::from_eigen(&vals, &vecs, |l| if l > ZERO_TOL { l.ln() } else { 0.0 });
    let mut out = 0.0;
    for l in model.lindblad_ops() {
        let ltl = l * tau * l.adjoint();
        if inner(&kernel, &ltl).re > SUPP_TOL {
            return Ok(f64::INFINITY);
        }
        out += inner(&(l.adjoint() * l * tau - ltl), &ln_tau).re;
    }
    Ok(out)
}

/// Spectral form of `D2`, degenerate eigenvalues merged.
pub fn entropy_rate_d2(model: &MeasurementModel, tau: &CMatrix) -> Result<f64> {
    checked_eigh(tau)?;
    let tol = Tolerances::default();
    let comps = linalg::spectral_decompose(tau, &tol)?;
    let a = model.r_sym();
    let mean = inner(a, tau).re;
    let b = a - linalg::identity(model.dim()).scale(mean);
    let pos: Vec<_> = comps.iter().filter(|cpt| cpt.eigenvalue > ZERO_TOL).collect();
    let mut out = 0.0;
    for k in &pos {
        let pbp = &k.projector * &b * &k.projector;
        out += 0.5 * k.eigenvalue * (&pbp * &pbp).trace().re;
    }
    for k in &pos {
        for r in &pos {
            if std::ptr::eq(*k, *r) {
                continue;
            }
            let (lk, lr) = (k.eigenvalue, r.eigenvalue);
            // -> lk as lr -> lk
            let w = lk * ((lk - lr) / lr).ln_1p() / ((lk - lr) / lr);
            out += 0.5 * (&k.projector * a * &r.projector * a * &k.projector).trace().re * w;
        }
    }
    Ok(out)
}

/// `D2` as the `u`-integral, mapped to `theta` by `u = lbar tan(theta)`.
pub fn entropy_rate_d2_quadrature(model: &MeasurementModel, tau: &CMatrix) -> Result<f64> {
    let (vals, vecs) = checked_eigh(tau)?;
    let d = model.dim();
    let pos: Vec<f64> = vals.iter().copied().filter(|&l| l > ZERO_TOL).collect();
    if pos.is_empty() {
        return Err(Error::ZeroTrace(0.0));
    }
    let lbar = pos.iter().sum::<f64>() / pos.len() as f64;
    let lam: Vec<f64> = vals.iter().map(|&l| if l > ZERO_TOL { l } else { 0.0 }).collect();
    // everything in the eigenbasis of tau
    let vd = vecs.adjoint();
    let r = &vd * model.r_op() * &vecs;
    let rd = r.adjoint();
    let a = &r + &rd;
    let mean: f64 = (0..d).map(|k| lam[k] * a[(k, k)].re).sum();
    let b = &a - linalg::identity(d).scale(mean);
    let comm = CMatrix::from_fn(d, d, |i, j| r[(i, j)] * (lam[i] - lam[j]));
    let integrand = |u: f64| -> f64 {
        let f1: Vec<f64> = lam.iter().map(|&l| u * l / ((u + l) * (u + l))).collect();
        let f2: Vec<f64> = lam.iter().map(|&l| l / (u + l)).collect();
        let f3: Vec<f64> = lam.iter().map(|&l| l / ((u + l) * (u + l))).collect();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                // Tr{F1 B F2 B}
                acc += b[(i, j)] * b[(j, i)] * (f1[i] * f2[j]);
                // Tr{F3 [tau,R] F2 R^dag}
                acc += comm[(i, j)] * rd[(j, i)] * (f3[i] * f2[j]);
                // -Tr{[F2, R] F2 R^dag}
                acc -= r[(i, j)] * rd[(j, i)] * ((f2[i] - f2[j]) * f2[j]);
            }
        }
        acc.re
    };
    let g = |th: f64| {
        let cth = th.cos();
        let u = lbar * th.tan();
        integrand(u) * lbar / (cth * cth)
    };
    let q = quadrature::integrate(g, 0.0, FRAC_PI_2, 1e-10, 1e-10, 4000)?;
    Ok(q.value)
}

/// `D3 = sum_z mu(z) (-Tr{J[tau ln tau](z)} - Tr{J[tau](z)} S(j(tau; z)))`.
pub fn entropy_rate_d3(model: &MeasurementModel, tau: &CMatrix) -> Result<f64> {
    if model.amplitudes().is_empty() {
        return Ok(0.0);
    }
    let (vals, vecs) = checked_eigh(tau)?;
    let tlt = linalg::from_eigen(&vals, &vecs, xlnx);
    let mut out = 0.0;
    for a in model.amplitudes() {
        let i = inner(&a.effect, tau).re;
        let mut term = -inner(&a.effect, &tlt).re;
        if i > ZERO_TOL {
            let j = model.jump_map(a.z, tau)?.unscale(i);
            term -= i * entropy_of(&linalg::hermitize(&j))?;
        }
        out += a.mu * term;
    }
    Ok(out)
}

pub fn entropy_rate_terms(model: &MeasurementModel, tau: &DensityMatrix) -> Result<EntropyRateTerms> {
    let t = tau.matrix();
    Ok(EntropyRateTerms {
        d1: entropy_rate_d1(model, t)?,
        d2: entropy_rate_d2(model, t)?,
        d2_quadrature: entropy_rate_d2_quadrature(model, t)?,
        d3: entropy_rate_d3(model, t)?,
    })
}

/// `D1 - D2 - D3` with the spectral `D2`.
pub fn entropy_rate(model: &MeasurementModel, tau: &CMatrix) -> Result<f64> {
    Ok(entropy_rate_d1(model, tau)? - entropy_rate_d2(model, tau)? - entropy_rate_d3(model, tau)?)
}

/// `I_t(P|Q) = E_P[ln ||sigma_t||]` from sampled log-weights.
pub fn classical_rel_entropy_q(log_weights: &[f64]) -> Result<Estimate> {
    summarize(log_weights.iter().copied())
}

/// `m^2 / 2 + sum_z (1 - I + I ln I) mu(z)` at one state.
pub fn classical_rel_entropy_rate_q_at(model: &MeasurementModel, rho: &CMatrix) -> f64 {
    let m = model.mean_drift(rho);
    let mut out = 0.5 * m * m;
    for a in model.amplitudes() {
        let i = inner(&a.effect, rho).re.max(0.0);
        out += (1.0 - i + xlnx(i)) * a.mu;
    }
    out
}

pub fn classical_rel_entropy_rate_q(model: &MeasurementModel, states: &[CMatrix]) -> Result<Estimate> {
    summarize(states.iter().map(|s| classical_rel_entropy_rate_q_at(model, s)))
}

/// `I_t(P^alpha|P)` from sampled `ln(w^alpha / w)` along `P^alpha` paths.
pub fn classical_rel_entropy_pair(log_ratios: &[f64]) -> Result<Estimate> {
    summarize(log_ratios.iter().copied())
}

/// Rate integrand of `I_t(P^alpha|P)`: `(m^a - m)^2 / 2 + sum_z mu (I - I^a + I^a ln(I^a / I))`.
pub fn classical_rel_entropy_pair_rate_at(model: &MeasurementModel, rho_alpha: &CMatrix, rho: &CMatrix) -> f64 {
    let dm = model.mean_drift(rho_alpha) - model.mean_drift(rho);
    let mut out = 0.5 * dm * dm;
    for a in model.amplitudes() {
        let ia = inner(&a.effect, rho_alpha).re.max(0.0);
        let i = inner(&a.effect, rho).re.max(0.0);
        let log_term = if ia <= 0.0 {
            0.0
        } else if i <= 0.0 {
            f64::INFINITY
        } else {
            ia * (ia / i).ln()
        };
        out += a.mu * (i - ia + log_term);
    }
    out
}

/// An orthogonal pure-state decomposition `rho = sum_a w_a rho_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShattenDecomposition {
    pub weights: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Two retained weights coincide, so the decomposition is not unique.
    pub degenerate: bool,
}

impl ShattenDecomposition {
    /// A user-supplied decomposition, checked against `rho`.
    pub fn new(rho: &DensityMatrix, weights: Vec<f64>, states: Vec<DensityMatrix>) -> Result<Self> {
        if weights.len() != states.len() || weights.is_empty() {
            return Err(Error::Config("weights and states must pair up".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("weights must be positive".into()));
        }
        let mut sum = linalg::zeros(rho.dim());
        for (i, (w, s)) in weights.iter().zip(&states).enumerate() {
            if s.purity_defect() > 1e-10 {
                return Err(Error::Config(format!("state {i} is not pure")));
            }
            for t in &states[..i] {
                if inner(t.matrix(), s.matrix()).re > 1e-10 {
                    return Err(Error::Config("states are not orthogonal".into()));
                }
            }
            sum += s.matrix().scale(*w);
        }
        if linalg::max_abs_diff(&sum, rho.matrix()) > 1e-10 {
            return Err(Error::Config("decomposition does not reconstruct the state".into()));
        }
        let degenerate = has_close_pair(&weights);
        Ok(ShattenDecomposition { weights, states, degenerate })
    }
}

fn has_close_pair(w: &[f64]) -> bool {
    w.iter().enumerate().any(|(i, a)| w[..i].iter().any(|b| (a - b).abs() < 1e-8))
}

/// Eigen-decomposition with descending weights and each eigenvector's
/// first non-negligible component made real positive.
pub fn shatten_decompose(rho: &DensityMatrix) -> Result<ShattenDecomposition> {
    let (vals, vecs) = checked_eigh(rho.matrix())?;
    let d = rho.dim();
    let mut weights = Vec::new();
    let mut states = Vec::new();
    for k in (0..d).rev() {
        if vals[k] <= ZERO_TOL {
            continue;
        }
        let mut v: Vec<C64> = vecs.column(k).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.norm() > 1e-12).copied() {
            let phase = first.conj() / first.norm();
            for x in &mut v {
                *x *= phase;
            }
        }
        weights.push(vals[k]);
        states.push(DensityMatrix::pure(&v)?);
    }
    let degenerate = has_close_pair(&weights);
    Ok(ShattenDecomposition { weights, states, degenerate })
}

/// `S(rho) - E[S(rho_t)]` from a sample of a posteriori states.
pub fn amount_of_information(rho: &DensityMatrix, states: &[CMatrix]) -> Result<Estimate> {
    let s0 = von_neumann_entropy(rho)?;
    let ents = states.iter().map(entropy_of).collect::<Result<Vec<_>>>()?;
    let e = summarize(ents)?;
    Ok(Estimate { mean: s0 - e.mean, ..e })
}

/// Per-time ensemble summaries of named scalar functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[f][t]`.
    pub values: Vec<Vec<Estimate>>,
    pub provenance: Provenance,
}

impl EnsembleSeries {
    pub fn get(&self, name: &str) -> Option<&[Estimate]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }
}

impl EnsembleSeries {
    /// Rows `t,functional,mean,se`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,functional,mean,se")?;
        for (ti, t) in self.times.iter().enumerate() {
            for (name, vals) in self.names.iter().zip(&self.values) {
                let e = vals[ti];
                writeln!(w, "{t:.16e},{name},{:.16e},{:.16e}", e.mean, e.se)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub model_hash: String,
    pub seed: u64,
    pub dt: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportFields {
    pub s_pi1: f64,
    pub s_pi2: f64,
    pub s_pi3: f64,
    pub s_sigma_pi1: f64,
    pub s_sigma_pi2: f64,
    pub s_sigma_pi3: f64,
    pub s_sigma_pi: f64,
    pub amount_of_information: f64,
}

/// The mutual-entropy hierarchy at one time, relative to one decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MutualEntropyReport {
    pub t: f64,
    #[serde(flatten)]
    pub values: ReportFields,
    pub standard_errors: ReportFields,
    /// `S(eta_t) - E_P[S(rho_t)]`, the second estimator of `sPi1`.
    pub s_pi1_entropy_difference: f64,
    /// `sSigmaPi - sSigmaPi_i - sPi_i` for `i = 1, 2, 3`; the first uses
    /// `sPi1` from the independent direct ensemble.
    pub chain_rule_residuals: [f64; 3],
    pub chain_rule_se: [f64; 3],
    /// `sPi1` and the amount of information from an independently seeded
    /// ensemble started at `rho`.
    pub direct_s_pi1: Estimate,
    pub direct_amount_of_information: Estimate,
    pub entropy_rho: f64,
    pub entropy_eta: f64,
    pub weights: Vec<f64>,
    pub degenerate_decomposition: bool,
    pub provenance: Provenance,
}

impl MutualEntropyReport {
    /// Chain-rule residuals within `k` combined standard errors.
    pub fn chain_rule_holds(&self, k: f64) -> bool {
        self.chain_rule_residuals.iter().zip(&self.chain_rule_se).all(|(r, se)| r.abs() <= k * se + 1e-12)
    }
}

/// Seed offset of the direct cross-check ensemble.
pub const DIRECT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mutual_entropy_report(
    model: &MeasurementModel,
    rho: &DensityMatrix,
    decomposition: &ShattenDecomposition,
    t: f64,
    mc: &McConfig,
) -> Result<MutualEntropyReport> {
    let n = mc.n;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut sum = linalg::zeros(rho.dim());
    for (w, s) in decomposition.weights.iter().zip(&decomposition.states) {
        if !crate::trajectory::support_contained(s, rho, SUPP_TOL) {
            return Err(Error::SupportViolation);
        }
        sum += s.matrix().scale(*w);
    }
    if linalg::max_abs_diff(&sum, rho.matrix()) > 1e-10 {
        return Err(Error::Config("decomposition does not reconstruct the state".into()));
    }
    let provenance = Provenance { model_hash: model.fingerprint(), seed: mc.seed, dt: mc.dt, n };
    let s_rho = von_neumann_entropy(rho)?;
    let ws = &decomposition.weights;

    let (eta, etas) = if t == 0.0 {
        (rho.clone(), decomposition.states.clone())
    } else {
        let eta = propagate_master(model, rho, &[t])?.states.remove(0);
        let etas = decomposition
            .states
            .iter()
            .map(|s| Ok(propagate_master(model, s, &[t])?.states.remove(0)))
            .collect::<Result<Vec<_>>>()?;
        (eta, etas)
    };
    let s_eta = von_neumann_entropy(&eta)?;
    let s_etas = etas.iter().map(von_neumann_entropy).collect::<Result<Vec<_>>>()?;
    let mut s_pi3 = 0.0;
    for (w, e) in ws.iter().zip(&etas) {
        s_pi3 += w * quantum_relative_entropy(e, &eta)?;
    }
    let sum_w_s_etas: f64 = ws.iter().zip(&s_etas).map(|(w, s)| w * s).sum();

    if t == 0.0 {
        // rho_t = rho and rho^a_t = rho^a on every path, all weights 1
        let mut ea = 0.0;
        for (w, s) in ws.iter().zip(&decomposition.states) {
            ea += w * von_neumann_entropy(s)?;
        }
        let values = ReportFields {
            s_pi1: 0.0,
            s_pi2: 0.0,
            s_pi3,
            s_sigma_pi1: s_rho - ea,
            s_sigma_pi2: s_eta - ea,
            s_sigma_pi3: sum_w_s_etas - ea,
            s_sigma_pi: s_eta - ea,
            amount_of_information: 0.0,
        };
        return Ok(MutualEntropyReport {
            t,
            values,
            standard_errors: ReportFields::default(),
            s_pi1_entropy_difference: 0.0,
            chain_rule_residuals: [
                values.s_sigma_pi - values.s_sigma_pi1 - values.s_pi1,
                values.s_sigma_pi - values.s_sigma_pi2 - values.s_pi2,
                values.s_sigma_pi - values.s_sigma_pi3 - values.s_pi3,
            ],
            chain_rule_se: [0.0; 3],
            direct_s_pi1: Estimate::exact(0.0),
            direct_amount_of_information: Estimate::exact(0.0),
            entropy_rho: s_rho,
            entropy_eta: s_eta,
            weights: ws.clone(),
            degenerate_decomposition: decomposition.degenerate,
            provenance,
        });
    }

    let grid = TimeGrid::new(t, mc.dt)?;
    let steps = [grid.n_steps];
    let eta_m = eta.matrix().clone();

    // per alpha: S(rho^a), S(rho), S(rho|eta), ln(w^a/w), all along P^a paths
    let mut per_alpha = Vec::new();
    for (alpha, s_alpha) in decomposition.states.iter().enumerate() {
        let samples = try_map_indexed(n, mc.workers, |i| {
            let mut rng = RngStream::new(mc.seed, alpha as u64 * n as u64 + i);
            let mut a = Walker::new(model, Mode::Physical, s_alpha, mc.dt)?;
            let mut b = Walker::new(model, Mode::Linear, rho, mc.dt)?;
            let out = observe_coupled(&mut a, &mut b, &mut rng, &steps, |a, b| -> Result<[f64; 4]> {
                let rb = b.rho();
                Ok([
                    entropy_of(&linalg::hermitize(&a.rho()))?,
                    entropy_of(&linalg::hermitize(&rb))?,
                    relative_entropy_of(&linalg::hermitize(&rb), &eta_m)?,
                    a.log_weight() - b.log_weight(),
                ])
            });
            out.into_iter().next().unwrap()
        })?;
        let mut accs = [Accumulator::new(); 4];
        for s in &samples {
            for (acc, x) in accs.iter_mut().zip(s) {
                acc.push(*x);
            }
        }
        per_alpha.push(accs.map(|a| a.summary()));
    }
    let combine = |f: usize| linear_combination(&ws.iter().zip(&per_alpha).map(|(w, e)| (*w, e[f])).collect::<Vec<_>>());
    let ea = combine(0);
    let ep_s = combine(1);
    let s_pi1 = combine(2);
    let s_pi2 = combine(3);

    let direct = try_map_indexed(n, mc.workers, |i| {
        let mut rng = RngStream::new(mc.seed.wrapping_add(DIRECT_SEED_OFFSET), i);
        let mut w = Walker::new(model, Mode::Physical, rho, mc.dt)?;
        let out = observe_walk(&mut w, &mut rng, &steps, |w| -> Result<[f64; 2]> {
            let r = linalg::hermitize(&w.rho());
            Ok([entropy_of(&r)?, relative_entropy_of(&r, &eta_m)?])
        });
        out.into_iter().next().unwrap()
    })?;
    let direct_s = summarize(direct.iter().map(|x| x[0]))?;
    let direct_s_pi1 = summarize(direct.iter().map(|x| x[1]))?;
    let direct_amount = Estimate { mean: s_rho - direct_s.mean, ..direct_s };

    // sSigmaPi1 and sSigmaPi share sPi2 and Ea; their difference is S(eta) - E_P S(rho)
    let diff_se = (ea.se * ea.se + s_pi2.se * s_pi2.se).sqrt();
    let values = ReportFields {
        s_pi1: s_pi1.mean,
        s_pi2: s_pi2.mean,
        s_pi3,
        s_sigma_pi1: s_pi2.mean + ep_s.mean - ea.mean,
        s_sigma_pi2: s_eta - ea.mean,
        s_sigma_pi3: s_pi2.mean + sum_w_s_etas - ea.mean,
        s_sigma_pi: s_pi2.mean + s_eta - ea.mean,
        amount_of_information: s_rho - ep_s.mean,
    };
    let standard_errors = ReportFields {
        s_pi1: s_pi1.se,
        s_pi2: s_pi2.se,
        s_pi3: 0.0,
        s_sigma_pi1: (diff_se * diff_se + ep_s.se * ep_s.se).sqrt(),
        s_sigma_pi2: ea.se,
        s_sigma_pi3: diff_se,
        s_sigma_pi: diff_se,
        amount_of_information: ep_s.se,
    };
    let residuals = [
        values.s_sigma_pi - values.s_sigma_pi1 - direct_s_pi1.mean,
        values.s_sigma_pi - values.s_sigma_pi2 - values.s_pi2,
        values.s_sigma_pi - values.s_sigma_pi3 - values.s_pi3,
    ];
    let residual_se = [ep_s.se.hypot(direct_s_pi1.se), 0.0, 0.0];
    Ok(MutualEntropyReport {
        t,
        values,
        standard_errors,
        s_pi1_entropy_difference: s_eta - ep_s.mean,
        chain_rule_residuals: residuals,
        chain_rule_se: residual_se,
        direct_s_pi1,
        direct_amount_of_information: direct_amount,
        entropy_rho: s_rho,
        entropy_eta: s_eta,
        weights: ws.clone(),
        degenerate_decomposition: decomposition.degenerate,
        provenance,
    })
}

/// Split of the change of `E_P[S(rho_t | eta_t)]` over `[t, t + dt_obs]`
/// into a demixture gain (nonnegative) and a memory loss (nonpositive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainLoss {
    pub gain: Estimate,
    pub loss: Estimate,
    /// Signs checked only where `|term| > 3 SE`.
    pub signs_consistent: bool,
}

pub fn information_gain_loss(
    model: &MeasurementModel,
    rho: &DensityMatrix,
    t: f64,
    dt_obs: f64,
    mc: &McConfig,
) -> Result<GainLoss> {
    let grid = TimeGrid::new(t + dt_obs, mc.dt)?;
    let s0 = grid.step_of(t).ok_or_else(|| Error::Config(format!("time {t} is not on the grid")))?;
    let steps = [s0, grid.n_steps];
    let eta = propagate_master(model, rho, &[t, t + dt_obs])?.states;
    let u = crate::semigroup::propagator(model, dt_obs)?;
    let samples = try_map_indexed(mc.n, mc.workers, |i| {
        let mut rng = RngStream::new(mc.seed, i);
        let mut w = Walker::new(model, Mode::Physical, rho, mc.dt)?;
        let r = observe_walk(&mut w, &mut rng, &steps, |w| linalg::hermitize(&w.rho()));
        let moved = linalg::hermitize(&u.apply(&r[0]));
        Ok([
            relative_entropy_of(&r[1], &moved)?,
            relative_entropy_of(&moved, eta[1].matrix())? - relative_entropy_of(&r[0], eta[0].matrix())?,
        ])
    })?;
    let gain = summarize(samples.iter().map(|x| x[0]))?;
    let loss = summarize(samples.iter().map(|x| x[1]))?;
    let signs_consistent =
        (gain.mean.abs() <= 3.0 * gain.se || gain.mean >= 0.0) && (loss.mean.abs() <= 3.0 * loss.se || loss.mean <= 0.0);
    Ok(GainLoss { gain, loss, signs_consistent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::*;
    use crate::linalg::real_matrix;
    use crate::model::fixtures::*;

    fn diag(a: f64, b: f64) -> DensityMatrix {
        DensityMatrix::new(real_matrix(2, &[a, 0.0, 0.0, b])).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!(von_neumann_entropy(&excited()).unwrap().abs() < 1e-15);
        let mm = DensityMatrix::maximally_mixed(2);
        assert!((von_neumann_entropy(&mm).unwrap() - 2f64.ln()).abs() < 1e-15);
        let s = von_neumann_entropy(&diag(0.75, 0.25)).unwrap();
        let oracle = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((s - oracle).abs() < 1e-14);
        assert!((s - 0.562335).abs() < 1e-6);
    }

    #[test]
    fn relative_entropy_examples() {
        let x = mixed_state();
        assert!(quantum_relative_entropy(&x, &x).unwrap() < 1e-12);
        assert_eq!(quantum_relative_entropy(&excited(), &ground()).unwrap(), f64::INFINITY);
        let v = quantum_relative_entropy(&diag(0.75, 0.25), &DensityMatrix::maximally_mixed(2)).unwrap();
        assert!((v - (2f64.ln() - 0.5623351446188083)).abs() < 1e-12);
        assert!((v - 0.130812).abs() < 1e-6);
        // pure inside a mixed support is finite
        assert!(quantum_relative_entropy(&plus(), &DensityMatrix::maximally_mixed(2)).unwrap().is_finite());
    }

    #[test]
    fn purity_examples() {
        let pure = vec![excited().into_matrix(), plus().into_matrix()];
        assert!(aposteriori_purity(&pure).unwrap().mean.abs() < 1e-15);
        let mm = vec![DensityMatrix::maximally_mixed(2).into_matrix()];
        assert_eq!(aposteriori_purity(&mm).unwrap().mean, 0.5);
        assert_eq!(aposteriori_purity(&[]).unwrap_err(), Error::EmptySample);
    }

    #[test]
    fn purity_rate_examples() {
        let sample = vec![mixed_state().into_matrix(), DensityMatrix::maximally_mixed(2).into_matrix()];
        let (p1, _, p3) = purity_rates(&model_d(), &sample).unwrap();
        assert_eq!((p1.mean, p3.mean), (0.0, 0.0));
        for (_, m) in all() {
            for s in [excited(), plus(), ground()] {
                let t = purity_rate_terms(&m, s.matrix()).unwrap();
                assert!(t.p2.abs() < 1e-14);
            }
        }
        let t = purity_rate_terms(&model_j(), DensityMatrix::maximally_mixed(2).matrix()).unwrap();
        assert!((t.p3 - t.p3_expanded).abs() < 1e-10);
        assert!(t.p3 >= 0.0);
    }

    #[test]
    fn entropy_rate_examples() {
        for (_, m) in all() {
            for s in [excited(), plus()] {
                assert!(entropy_rate_d2(&m, s.matrix()).unwrap().abs() < 1e-12);
            }
        }
        let t = entropy_rate_terms(&model_d(), &diag(0.75, 0.25)).unwrap();
        assert!((t.d2 - t.d2_quadrature).abs() <= 1e-6 * t.d2.abs().max(1e-12));
        let t = entropy_rate_terms(&model_j(), &DensityMatrix::maximally_mixed(2)).unwrap();
        assert!(t.d3 >= 0.0);
        // pure state with C2: D3 = 0
        assert!(entropy_rate_d3(&model_j(), plus().matrix()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn d1_infinite_off_range() {
        let mut raw = raw_model_d();
        raw.ls = vec![sigma_minus()];
        let m = MeasurementModel::validate(raw).unwrap();
        assert_eq!(entropy_rate_d1(&m, excited().matrix()).unwrap(), f64::INFINITY);
        assert_eq!(entropy_rate_d1(&m, ground().matrix()).unwrap(), 0.0);
        assert!(entropy_rate_d1(&m, mixed_state().matrix()).unwrap().is_finite());
    }

    #[test]
    fn classical_rate_examples() {
        let mm = DensityMatrix::maximally_mixed(2).into_matrix();
        assert_eq!(classical_rel_entropy_rate_q_at(&model_i(), &mm), 0.0);
        assert_eq!(classical_rel_entropy_rate_q_at(&model_0(), &mm), 0.0);
        assert!(classical_rel_entropy_rate_q_at(&model_j(), excited().matrix()).abs() < 1e-15);
        let v = classical_rel_entropy_rate_q_at(&model_j(), &mm);
        assert!((v - (0.5 + 0.5 * 0.5f64.ln())).abs() < 1e-15);
        assert!((v - 0.15343).abs() < 1e-5);
        assert_eq!(classical_rel_entropy_pair_rate_at(&model_d(), &mm, &mm), 0.0);
    }

    #[test]
    fn shatten_examples() {
        let d = shatten_decompose(&plus()).unwrap();
        assert_eq!(d.weights.len(), 1);
        assert!((d.weights[0] - 1.0).abs() < 1e-12);
        assert!(linalg::max_abs_diff(d.states[0].matrix(), plus().matrix()) < 1e-12);

        let d = shatten_decompose(&diag(0.75, 0.25)).unwrap();
        assert_eq!(d.weights, vec![0.75, 0.25]);
        assert!(linalg::max_abs_diff(d.states[0].matrix(), excited().matrix()) < 1e-15);
        assert!(!d.degenerate);

        let d = shatten_decompose(&DensityMatrix::maximally_mixed(2)).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.weights.len(), 2);
        assert!(inner(d.states[0].matrix(), d.states[1].matrix()).norm() < 1e-12);

        let rho = mixed_state();
        let d = shatten_decompose(&rho).unwrap();
        assert!(ShattenDecomposition::new(&rho, d.weights.clone(), d.states.clone()).is_ok());
        assert!(ShattenDecomposition::new(&rho, vec![1.0], vec![excited()]).is_err());
    }

    #[test]
    fn amount_of_information_at_zero() {
        let rho = mixed_state();
        let e = amount_of_information(&rho, &[rho.matrix().clone(), rho.matrix().clone()]).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn report_initial_values() {
        let rho = DensityMatrix::maximally_mixed(2);
        let dec = shatten_decompose(&rho).unwrap();
        let r = mutual_entropy_report(&model_d(), &rho, &dec, 0.0, &McConfig::new(10, 1e-3, 1)).unwrap();
        let s = 2f64.ln();
        let v = r.values;
        for x in [v.s_sigma_pi, v.s_sigma_pi1, v.s_sigma_pi2, v.s_pi3] {
            assert!((x - s).abs() < 1e-12);
        }
        for x in [v.s_sigma_pi3, v.s_pi1, v.s_pi2] {
            assert!(x.abs() < 1e-12);
        }
    }

    #[test]
    fn d2_is_continuous_at_degeneracy() {
        let m = model_d();
        let merged = entropy_rate_d2(&m, &real_matrix(2, &[0.5, 0.0, 0.0, 0.5])).unwrap();
        let eps = 1e-6;
        let l = 1.0 / (2.0 + eps);
        let split = entropy_rate_d2(&m, &real_matrix(2, &[l, 0.0, 0.0, l * (1.0 + eps)])).unwrap();
        assert!((merged - split).abs() < 1e-4);
    }

    #[test]
    fn gain_loss_signs() {
        let g = information_gain_loss(&model_d(), &mixed_state(), 0.2, 0.05, &McConfig::new(200, 1e-3, 4)).unwrap();
        assert!(g.signs_consistent);
        assert!(g.gain.mean >= 0.0);
    }

    #[test]
    fn report_on_infoless_model() {
        let rho = mixed_state();
        let dec = shatten_decompose(&rho).unwrap();
        let r = mutual_entropy_report(&model_i(), &rho, &dec, 0.1, &McConfig::new(20, 1e-2, 3)).unwrap();
        assert_eq!(r.values.s_pi2, 0.0);
        assert!(r.values.s_pi1.abs() < 1e-12);
        assert!(r.values.amount_of_information.abs() < 1e-12);
    }
}
