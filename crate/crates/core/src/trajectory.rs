//! Stochastic layer: the linear equation for non-normalized a posteriori
//! states under the reference probability, the same equation driven by the
//! physical noise, and the bookkeeping of the output signal.
//!
//! One step of length `h` with Wiener increment `dW` applies the Kraus map
//! `s -> M s M^dag + h sum_j L_j s L_j^dag`, where
//! `M = 1 - G h + R dW + R^2 (dW^2 - h) / 2`, then replaces `s` by
//! `J[s](z)` for every amplitude that jumped. Its mean drift reproduces the
//! linear equation to first order in `h`, it is completely positive for
//! every realization, and it maps rank-one states to rank-one states when
//! there are no `L_j`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, DensityMatrix, C64};
use crate::model::MeasurementModel;
use crate::semigroup::TestFunction;

/// Largest admissible `rate * dt`.
pub const RATE_CAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Reference probability: output increments are Lévy, states carry a weight.
    Linear,
    /// Physical probability: the noise is generated by the state itself.
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        if !(t_max > 0.0 && dt > 0.0 && t_max.is_finite()) {
            return Err(Error::Config(format!("need t_max > 0 and dt > 0, got {t_max}, {dt}")));
        }
        let n = (t_max / dt).round();
        if ((n * dt - t_max) / t_max).abs() > 1e-9 {
            return Err(Error::Config(format!("t_max {t_max} is not a multiple of dt {dt}")));
        }
        Ok(TimeGrid { t_max, dt, n_steps: n as usize })
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Index of the grid point closest to `t`, if `t` lies on the grid.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let n = (t / self.dt).round();
        ((n * self.dt - t).abs() <= 1e-9 * self.dt.max(t) && n >= 0.0 && n as usize <= self.n_steps).then_some(n as usize)
    }

    /// Rejects grids whose per-step jump probability could exceed the cap.
    pub fn check_rates(&self, model: &MeasurementModel, mode: Mode) -> Result<()> {
        check_rates(model, mode, self.dt)
    }
}

pub fn check_rates(model: &MeasurementModel, mode: Mode, dt: f64) -> Result<()> {
    for a in model.amplitudes() {
        let bound = match mode {
            Mode::Linear => a.mu,
            Mode::Physical => a.mu * a.effect_norm,
        };
        if bound * dt > RATE_CAP {
            return Err(Error::RateTooHigh(bound * dt));
        }
    }
    Ok(())
}

/// A reproducible random stream indexed by `(master_seed, stream_index)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        RngStream { master_seed, stream_index, rng }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// The draws for one step: one standard normal, then one uniform per amplitude.
    pub fn step_noise(&mut self, n_amplitudes: usize, out: &mut StepNoise) {
        out.normal = self.normal();
        out.uniforms.clear();
        for _ in 0..n_amplitudes {
            out.uniforms.push(self.uniform());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepNoise {
    pub normal: f64,
    pub uniforms: Vec<f64>,
}

/// The realized driving increments of one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Increment {
    /// Increment of the reference Wiener process `W`.
    pub dw: f64,
    /// Increment of the innovation `W-breve`; equals `dw` under the reference probability.
    pub dw_breve: f64,
    /// `m(t)` before the step (0 in linear mode).
    pub m: f64,
    /// Jump flag per amplitude, in model order.
    pub jumps: Vec<bool>,
}

// Column-major dense kernels on d x d slices.
fn mul(a: &[C64], b: &[C64], out: &mut [C64], d: usize) {
    for j in 0..d {
        for i in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..d {
                s += a[k * d + i] * b[j * d + k];
            }
            out[j * d + i] = s;
        }
    }
}

/// `out += scale * a b^dag`.
fn add_mul_adj(a: &[C64], b: &[C64], scale: f64, out: &mut [C64], d: usize) {
    for j in 0..d {
        for i in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..d {
                s += a[k * d + i] * b[k * d + j].conj();
            }
            out[j * d + i] += s * scale;
        }
    }
}

fn trace_of(a: &[C64], d: usize) -> f64 {
    (0..d).map(|i| a[i * d + i].re).sum()
}

/// `Re Tr{a s}`.
fn inner_re(a: &[C64], s: &[C64], d: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        for k in 0..d {
            let x = a[k * d + i] * s[i * d + k];
            acc += x.re;
        }
    }
    acc
}

fn hermitize_in_place(a: &mut [C64], d: usize) {
    for j in 0..d {
        a[j * d + j].im = 0.0;
        for i in 0..j {
            let v = (a[j * d + i] + a[i * d + j].conj()) * 0.5;
            a[j * d + i] = v;
            a[i * d + j] = v.conj();
        }
    }
}

/// One trajectory in progress. `sigma` is kept unnormalized and rescaled
/// only when its trace leaves `[1e-50, 1e50]`; the weight is
/// `ln Tr sigma + log_scale - ln Tr sigma_0`.
#[derive(Debug, Clone)]
pub struct Walker<'m> {
    model: &'m MeasurementModel,
    mode: Mode,
    dt: f64,
    d: usize,
    step: usize,
    sigma: CMatrix,
    log_scale: f64,
    log_tr0: f64,
    collapsed: bool,
    y: f64,
    cbv: f64,
    mart: f64,
    jump_part: f64,
    phase: f64,
    test_fn: Option<TestFunction>,
    // (1 - G h - R^2 h / 2)
    m0: CMatrix,
    mk: CMatrix,
    tmp: CMatrix,
    next: CMatrix,
    acc: CMatrix,
    last: Increment,
}

impl<'m> Walker<'m> {
    pub fn new(model: &'m MeasurementModel, mode: Mode, rho0: &DensityMatrix, dt: f64) -> Result<Self> {
        if rho0.dim() != model.dim() {
            return Err(Error::BadShape(format!("state dim {} vs model dim {}", rho0.dim(), model.dim())));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        check_rates(model, mode, dt)?;
        let d = model.dim();
        let m0 = linalg::identity(d) - model.no_jump_generator().scale(dt) - model.r_squared().scale(0.5 * dt);
        let sigma = rho0.matrix().clone();
        let log_tr0 = trace_of(sigma.as_slice(), d).ln();
        Ok(Walker {
            model,
            mode,
            dt,
            d,
            step: 0,
            sigma,
            log_scale: 0.0,
            log_tr0,
            collapsed: false,
            y: 0.0,
            cbv: 0.0,
            mart: 0.0,
            jump_part: 0.0,
            phase: 0.0,
            test_fn: None,
            m0,
            mk: linalg::zeros(d),
            tmp: linalg::zeros(d),
            next: linalg::zeros(d),
            acc: linalg::zeros(d),
            last: Increment { jumps: vec![false; model.amplitudes().len()], ..Increment::default() },
        })
    }

    /// Accumulate `int k(s) dY(s)` along the path.
    pub fn with_test_function(mut self, k: TestFunction) -> Self {
        self.test_fn = Some(k);
        self
    }

    pub fn model(&self) -> &'m MeasurementModel {
        self.model
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn sigma(&self) -> &CMatrix {
        &self.sigma
    }

    pub fn collapsed(&self) -> bool {
        self.collapsed
    }

    /// `ln(Tr sigma_t / Tr sigma_0)`; `-inf` after a collapse.
    pub fn log_weight(&self) -> f64 {
        if self.collapsed {
            return f64::NEG_INFINITY;
        }
        trace_of(self.sigma.as_slice(), self.d).ln() + self.log_scale - self.log_tr0
    }

    /// `Tr{a sigma_t} / Tr sigma_0`, finite even when the weight is tiny.
    pub fn weighted_expectation(&self, a: &CMatrix) -> C64 {
        if self.collapsed {
            return C64::new(0.0, 0.0);
        }
        linalg::inner(a, &self.sigma) * (self.log_scale - self.log_tr0).exp()
    }

    /// `sigma_t / Tr sigma_t`.
    pub fn rho(&self) -> CMatrix {
        let tr = trace_of(self.sigma.as_slice(), self.d);
        self.sigma.unscale(tr)
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// `(bounded variation part, r W-breve, jump sum)` of `Y`.
    pub fn y_parts(&self) -> (f64, f64, f64) {
        (self.cbv, self.mart, self.jump_part)
    }

    /// `int k dY` so far (0 without a test function).
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// `exp(i int k dY)`.
    pub fn phi(&self) -> C64 {
        C64::new(0.0, self.phase).exp()
    }

    pub fn last_increment(&self) -> &Increment {
        &self.last
    }

    /// Jump rate per amplitude under the walker's probability.
    pub fn intensity(&self, amp: usize) -> f64 {
        let a = &self.model.amplitudes()[amp];
        match self.mode {
            Mode::Linear => a.mu,
            Mode::Physical => {
                let tr = trace_of(self.sigma.as_slice(), self.d);
                let i = inner_re(a.effect.as_slice(), self.sigma.as_slice(), self.d) / tr;
                a.mu * i.max(0.0)
            }
        }
    }

    /// `m(t)` of the current normalized state.
    pub fn mean_drift(&self) -> f64 {
        let tr = trace_of(self.sigma.as_slice(), self.d);
        inner_re(self.model.r_sym().as_slice(), self.sigma.as_slice(), self.d) / tr
    }

    /// Turns raw draws into increments for a step of length `k * fine_dt`
    /// built from `k` consecutive fine draws. A jump fires when any fine
    /// uniform falls below the fine-step probability evaluated at the
    /// current intensity, so the step-level probability is `1 - exp(-rate h)`.
    pub fn increment_from(&self, noises: &[StepNoise], out: &mut Increment) {
        let k = noises.len() as f64;
        let h = self.dt;
        let sub = h / k;
        let z_sum: f64 = noises.iter().map(|n| n.normal).sum();
        out.dw_breve = sub.sqrt() * z_sum;
        out.m = match self.mode {
            Mode::Linear => 0.0,
            Mode::Physical => self.mean_drift(),
        };
        out.dw = out.dw_breve + out.m * h;
        out.jumps.clear();
        for a in 0..self.model.amplitudes().len() {
            let p = -(-self.intensity(a) * sub).exp_m1();
            out.jumps.push(noises.iter().any(|n| n.uniforms[a] < p));
        }
    }

    /// Advance by one step with the given realized increments.
    pub fn apply(&mut self, inc: &Increment) {
        let d = self.d;
        let h = self.dt;
        let model = self.model;
        let dw = inc.dw;

        if !self.collapsed {
            // M = m0 + R dW + R^2 dW^2 / 2
            let half_dw2 = 0.5 * dw * dw;
            {
                let mk = self.mk.as_mut_slice();
                let m0 = self.m0.as_slice();
                let r = model.r_op().as_slice();
                let r2 = model.r_squared().as_slice();
                for i in 0..d * d {
                    mk[i] = m0[i] + r[i] * dw + r2[i] * half_dw2;
                }
            }
            mul(self.mk.as_slice(), self.sigma.as_slice(), self.tmp.as_mut_slice(), d);
            self.next.fill(C64::new(0.0, 0.0));
            add_mul_adj(self.tmp.as_slice(), self.mk.as_slice(), 1.0, self.next.as_mut_slice(), d);
            for l in model.lindblad_ops() {
                mul(l.as_slice(), self.sigma.as_slice(), self.tmp.as_mut_slice(), d);
                add_mul_adj(self.tmp.as_slice(), l.as_slice(), h, self.next.as_mut_slice(), d);
            }
            for (a, amp) in model.amplitudes().iter().enumerate() {
                if !inc.jumps[a] {
                    continue;
                }
                self.acc.fill(C64::new(0.0, 0.0));
                for (w, v) in &amp.atoms {
                    mul(v.as_slice(), self.next.as_slice(), self.tmp.as_mut_slice(), d);
                    add_mul_adj(self.tmp.as_slice(), v.as_slice(), *w, self.acc.as_mut_slice(), d);
                }
                std::mem::swap(&mut self.acc, &mut self.next);
            }
            hermitize_in_place(self.next.as_mut_slice(), d);
            std::mem::swap(&mut self.sigma, &mut self.next);

            let tr = trace_of(self.sigma.as_slice(), d);
            if !(tr > 1e-300) || !tr.is_finite() {
                self.collapsed = true;
            } else if !(1e-50..=1e50).contains(&tr) {
                self.sigma.unscale_mut(tr);
                self.log_scale += tr.ln();
            }
        }

        // output signal
        let comp = model.compensator_drift();
        let mut jsum = 0.0;
        for (a, amp) in model.amplitudes().iter().enumerate() {
            if inc.jumps[a] {
                jsum += amp.z;
            }
        }
        let dy = (model.c() - comp) * h + model.r() * dw + jsum;
        if let Some(k) = &self.test_fn {
            self.phase += k.at(self.time()) * dy;
        }
        self.y += dy;
        self.cbv += (model.c() - comp) * h + model.r() * inc.m * h;
        self.mart += model.r() * inc.dw_breve;
        self.jump_part += jsum;
        self.step += 1;
        self.last.clone_from(inc);
    }

    /// Draw one step from `rng` and apply it.
    pub fn step(&mut self, rng: &mut RngStream, noise: &mut StepNoise, inc: &mut Increment) {
        rng.step_noise(self.model.amplitudes().len(), noise);
        self.increment_from(std::slice::from_ref(noise), inc);
        self.apply(inc);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub step: usize,
    pub z: f64,
}

/// One stored realization. Per-step series have `n_steps + 1` entries
/// (index 0 is `t = 0`) except `dw`, which has one entry per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPath {
    pub grid: TimeGrid,
    pub mode: Mode,
    pub y: Vec<f64>,
    /// Driving noise: `dW` in linear mode, `dW-breve` in physical mode.
    pub dw: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
    pub stride: usize,
    /// Normalized states at steps `0, stride, 2 stride, ...`.
    pub states: Vec<DensityMatrix>,
    pub log_weight: Vec<f64>,
    /// Number of stored states whose repair clipped more than the tolerance.
    pub repairs: usize,
    cbv: Vec<f64>,
    mart: Vec<f64>,
    jump_part: Vec<f64>,
}

impl TrajectoryPath {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.grid.n_steps).map(|i| self.grid.time(i)).collect()
    }

    /// State at a step that is a multiple of the stride.
    pub fn state_at_step(&self, step: usize) -> Option<&DensityMatrix> {
        step.is_multiple_of(self.stride).then(|| self.states.get(step / self.stride)).flatten()
    }

    /// CSV with columns `t,y,logWeight,jumpFlag`, plus `re_ij,im_ij` state
    /// entries on stored steps when `with_states` is set.
    pub fn write_csv<W: Write>(&self, mut w: W, with_states: bool) -> std::io::Result<()> {
        let d = self.states.first().map(|s| s.dim()).unwrap_or(0);
        write!(w, "t,y,logWeight,jumpFlag")?;
        if with_states {
            for i in 0..d {
                for j in 0..d {
                    write!(w, ",re_{i}{j},im_{i}{j}")?;
                }
            }
        }
        writeln!(w)?;
        let mut jumps = self.jumps.iter().peekable();
        for step in 0..=self.grid.n_steps {
            let mut flag = 0;
            while let Some(j) = jumps.peek() {
                if j.step == step {
                    flag += 1;
                    jumps.next();
                } else {
                    break;
                }
            }
            if with_states && step % self.stride != 0 {
                continue;
            }
            write!(w, "{:.16e},{:.16e},{:.16e},{}", self.grid.time(step), self.y[step], self.log_weight[step], flag)?;
            if with_states {
                let s = self.state_at_step(step).unwrap().matrix();
                for i in 0..d {
                    for j in 0..d {
                        write!(w, ",{:.16e},{:.16e}", s[(i, j)].re, s[(i, j)].im)?;
                    }
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn snapshot(walker: &Walker, repairs: &mut usize) -> Result<DensityMatrix> {
    let (state, info) = linalg::project_to_density(&walker.rho(), 1e-6)?;
    if info.warned {
        *repairs += 1;
    }
    Ok(state)
}

fn record_path(
    mut walker: Walker,
    driven: Option<&mut Walker>,
    grid: &TimeGrid,
    rng: &mut RngStream,
    stride: usize,
) -> Result<(TrajectoryPath, Vec<f64>)> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let n = grid.n_steps;
    let mut repairs = 0;
    let mut path = TrajectoryPath {
        grid: *grid,
        mode: walker.mode(),
        y: Vec::with_capacity(n + 1),
        dw: Vec::with_capacity(n),
        jumps: Vec::new(),
        stride,
        states: Vec::with_capacity(n / stride + 1),
        log_weight: Vec::with_capacity(n + 1),
        repairs: 0,
        cbv: Vec::with_capacity(n + 1),
        mart: Vec::with_capacity(n + 1),
        jump_part: Vec::with_capacity(n + 1),
    };
    let mut companion = Vec::new();
    let mut driven = driven;
    let push = |path: &mut TrajectoryPath, w: &Walker| {
        path.y.push(w.y());
        let (c, m, j) = w.y_parts();
        path.cbv.push(c);
        path.mart.push(m);
        path.jump_part.push(j);
        path.log_weight.push(w.log_weight());
    };
    push(&mut path, &walker);
    path.states.push(snapshot(&walker, &mut repairs)?);
    if let Some(b) = driven.as_deref() {
        companion.push(b.log_weight());
    }
    let mut noise = StepNoise::default();
    let mut inc = Increment::default();
    for step in 1..=n {
        walker.step(rng, &mut noise, &mut inc);
        if walker.collapsed() {
            return Err(Error::StateCollapse(walker.time()));
        }
        if let Some(b) = driven.as_deref_mut() {
            b.apply(&inc);
            companion.push(b.log_weight());
        }
        path.dw.push(inc.dw_breve);
        for (a, amp) in walker.model().amplitudes().iter().enumerate() {
            if inc.jumps[a] {
                path.jumps.push(JumpRecord { step, z: amp.z });
            }
        }
        push(&mut path, &walker);
        if step % stride == 0 {
            path.states.push(snapshot(&walker, &mut repairs)?);
        }
    }
    path.repairs = repairs;
    Ok((path, companion))
}

/// Integrates the linear equation under the reference probability.
pub fn simulate_linear_q(
    model: &MeasurementModel,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    rng: &mut RngStream,
    stride: usize,
) -> Result<TrajectoryPath> {
    let w = Walker::new(model, Mode::Linear, rho0, grid.dt)?;
    Ok(record_path(w, None, grid, rng, stride)?.0)
}

/// Integrates the nonlinear equation under the physical probability. The
/// stored weight is that of the co-integrated linear equation.
pub fn simulate_physical(
    model: &MeasurementModel,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    rng: &mut RngStream,
    stride: usize,
) -> Result<TrajectoryPath> {
    let w = Walker::new(model, Mode::Physical, rho0, grid.dt)?;
    Ok(record_path(w, None, grid, rng, stride)?.0)
}

/// `supp(x)` inside `supp(y)`: every eigenvector of `x` with weight above
/// `tol` has no component in the kernel of `y`.
pub fn support_contained(x: &DensityMatrix, y: &DensityMatrix, tol: f64) -> bool {
    let (yv, yvec) = linalg::eigh(y.matrix());
    let (xv, xvec) = linalg::eigh(x.matrix());
    for (i, &lx) in xv.iter().enumerate() {
        if lx <= tol {
            continue;
        }
        let v = xvec.column(i);
        for (k, &ly) in yv.iter().enumerate() {
            if ly <= tol && (yvec.column(k).adjoint() * v)[(0, 0)].norm_sqr() > tol {
                return false;
            }
        }
    }
    true
}

/// Physical path from `rho_alpha`, with the linear equation from `rho`
/// co-integrated on the same realized output. Returns the path and the
/// weight series of the companion.
pub fn simulate_coupled_pair(
    model: &MeasurementModel,
    rho_alpha: &DensityMatrix,
    rho: &DensityMatrix,
    grid: &TimeGrid,
    rng: &mut RngStream,
    stride: usize,
) -> Result<(TrajectoryPath, Vec<f64>)> {
    if !support_contained(rho_alpha, rho, 1e-10) {
        return Err(Error::SupportViolation);
    }
    let a = Walker::new(model, Mode::Physical, rho_alpha, grid.dt)?;
    let mut b = Walker::new(model, Mode::Linear, rho, grid.dt)?;
    record_path(a, Some(&mut b), grid, rng, stride)
}

/// Output decomposition `Y = Y_cbv + r W-breve + sum z N`.
pub fn ybv_decomposition(path: &TrajectoryPath) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if path.mode != Mode::Physical {
        return Err(Error::WrongMode);
    }
    Ok((path.cbv.clone(), path.mart.clone(), path.jump_part.clone()))
}

/// Runs one walker to each of `obs_steps` (ascending) and records
/// `observe(walker)` there.
pub fn observe_walk<T, F>(walker: &mut Walker, rng: &mut RngStream, obs_steps: &[usize], mut observe: F) -> Vec<T>
where
    F: FnMut(&Walker) -> T,
{
    let mut out = Vec::with_capacity(obs_steps.len());
    let mut noise = StepNoise::default();
    let mut inc = Increment::default();
    for &target in obs_steps {
        while walker.step_index() < target {
            walker.step(rng, &mut noise, &mut inc);
        }
        out.push(observe(walker));
    }
    out
}

/// Drives `lead` from `rng` and `follower` with the realized increments of
/// `lead`, recording `observe(lead, follower)` at each of `obs_steps`.
pub fn observe_coupled<T, F>(
    lead: &mut Walker,
    follower: &mut Walker,
    rng: &mut RngStream,
    obs_steps: &[usize],
    mut observe: F,
) -> Vec<T>
where
    F: FnMut(&Walker, &Walker) -> T,
{
    let mut out = Vec::with_capacity(obs_steps.len());
    let mut noise = StepNoise::default();
    let mut inc = Increment::default();
    for &target in obs_steps {
        while lead.step_index() < target {
            lead.step(rng, &mut noise, &mut inc);
            follower.apply(&inc);
        }
        out.push(observe(lead, follower));
    }
    out
}

/// A fine walker at `dt` and a coarse walker at `2 dt` fed from the same
/// draws: each coarse step consumes the two fine draws it covers. Observed
/// at the given times (multiples of `2 dt`). Returns `(fine, coarse)`.
pub fn observe_refinement<T, F>(
    fine: &mut Walker,
    coarse: &mut Walker,
    rng: &mut RngStream,
    times: &[f64],
    mut observe: F,
) -> Result<(Vec<T>, Vec<T>)>
where
    F: FnMut(&Walker) -> T,
{
    if (coarse.dt() - 2.0 * fine.dt()).abs() > 1e-15 * coarse.dt() {
        return Err(Error::Config("coarse dt must be twice the fine dt".into()));
    }
    let n_amp = fine.model().amplitudes().len();
    let mut pair = [StepNoise::default(), StepNoise::default()];
    let mut inc = Increment::default();
    let (mut of, mut oc) = (Vec::new(), Vec::new());
    for &t in times {
        let target = (t / coarse.dt()).round() as usize;
        if ((target as f64) * coarse.dt() - t).abs() > 1e-9 {
            return Err(Error::Config(format!("time {t} is not on the coarse grid")));
        }
        while coarse.step_index() < target {
            for n in pair.iter_mut() {
                rng.step_noise(n_amp, n);
                fine.increment_from(std::slice::from_ref(n), &mut inc);
                fine.apply(&inc);
            }
            coarse.increment_from(&pair, &mut inc);
            coarse.apply(&inc);
        }
        of.push(observe(fine));
        oc.push(observe(coarse));
    }
    Ok((of, oc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::*;
    use crate::linalg::max_abs_diff;
    use crate::model::fixtures::*;
    use crate::model::phi2;

    #[test]
    fn grid_validation() {
        assert_eq!(TimeGrid::new(1.0, 1e-3).unwrap().n_steps, 1000);
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 0.1).is_err());
        let g = TimeGrid::new(1.0, 0.2).unwrap();
        assert!(matches!(g.check_rates(&model_j(), Mode::Linear), Err(Error::RateTooHigh(_))));
        assert_eq!(g.step_of(0.6), Some(3));
        assert_eq!(g.step_of(0.5), None);
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..5).map({
            let mut r = RngStream::new(7, 3);
            move |_| r.uniform()
        }).collect();
        let b: Vec<f64> = (0..5).map({
            let mut r = RngStream::new(7, 3);
            move |_| r.uniform()
        }).collect();
        let c: Vec<f64> = (0..5).map({
            let mut r = RngStream::new(7, 4);
            move |_| r.uniform()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn decoupled_model_keeps_state_and_is_brownian() {
        let m = model_0();
        let rho = mixed_state();
        let grid = TimeGrid::new(0.5, 1e-2).unwrap();
        for mode in [Mode::Linear, Mode::Physical] {
            let mut rng = RngStream::new(1, 0);
            let w = Walker::new(&m, mode, &rho, grid.dt).unwrap();
            let (p, _) = record_path(w, None, &grid, &mut rng, 1).unwrap();
            let mut wsum = 0.0;
            for (i, s) in p.states.iter().enumerate() {
                assert_eq!(s.matrix(), rho.matrix());
                assert_eq!(p.log_weight[i], 0.0);
                if i > 0 {
                    wsum += p.dw[i - 1];
                }
                assert!((p.y[i] - (grid.time(i) + wsum)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infoless_jumps_carry_no_weight() {
        let m = model_i();
        let rho = mixed_state();
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        for seed in 0..20 {
            let mut rng = RngStream::new(seed, 0);
            let p = simulate_linear_q(&m, &rho, &grid, &mut rng, 10).unwrap();
            assert!(p.log_weight.iter().all(|&w| w == 0.0));
            assert!(p.states.iter().all(|s| s.matrix() == rho.matrix()));
        }
    }

    #[test]
    fn counting_path_bookkeeping() {
        let m = model_j();
        let grid = TimeGrid::new(2.0, 1e-3).unwrap();
        let mut rng = RngStream::new(11, 5);
        let p = simulate_physical(&m, &excited(), &grid, &mut rng, 100).unwrap();
        let (cbv, mart, jmp) = ybv_decomposition(&p).unwrap();
        for i in 0..=grid.n_steps {
            assert!((cbv[i] + mart[i] + jmp[i] - p.y[i]).abs() < 1e-10);
            assert!((cbv[i] + grid.time(i) * phi2(1.0, 1.0)).abs() < 1e-10);
            assert_eq!(mart[i], 0.0);
        }
        assert_eq!(jmp[grid.n_steps], p.jumps.len() as f64);
        let q = simulate_linear_q(&m, &excited(), &grid, &mut rng, 100).unwrap();
        assert_eq!(ybv_decomposition(&q).unwrap_err(), Error::WrongMode);
    }

    #[test]
    fn first_jump_from_excited_lands_in_ground() {
        let m = model_j();
        let grid = TimeGrid::new(3.0, 1e-3).unwrap();
        let mut rng = RngStream::new(3, 0);
        let p = simulate_physical(&m, &excited(), &grid, &mut rng, 1).unwrap();
        let first = p.jumps[0].step;
        let s = p.state_at_step(first).unwrap();
        assert!(max_abs_diff(s.matrix(), ground().matrix()) < 1e-9);
    }

    #[test]
    fn diffusive_pure_states_stay_pure() {
        let m = model_d();
        let grid = TimeGrid::new(1.0, 1e-3).unwrap();
        for seed in 0..10 {
            let mut rng = RngStream::new(seed, 0);
            let p = simulate_physical(&m, &plus(), &grid, &mut rng, 50).unwrap();
            assert!(p.states.iter().all(|s| s.purity_defect() < 1e-10));
        }
    }

    #[test]
    fn coupled_pair_identity_and_support() {
        let m = model_d();
        let grid = TimeGrid::new(0.5, 1e-3).unwrap();
        let mut rng = RngStream::new(2, 0);
        let (p, lw) = simulate_coupled_pair(&m, &plus(), &plus(), &grid, &mut rng, 100).unwrap();
        for (a, b) in p.log_weight.iter().zip(&lw) {
            assert_eq!(a, b);
        }
        assert_eq!(
            simulate_coupled_pair(&m, &excited(), &ground(), &grid, &mut rng, 1).unwrap_err(),
            Error::SupportViolation
        );
        let mm = DensityMatrix::maximally_mixed(2);
        let (p, lw) = simulate_coupled_pair(&model_i(), &excited(), &mm, &grid, &mut rng, 100).unwrap();
        assert!(p.log_weight.iter().chain(&lw).all(|&w| w == 0.0));
    }

    #[test]
    fn refinement_pair_shares_noise() {
        let m = model_0();
        let rho = mixed_state();
        let mut fine = Walker::new(&m, Mode::Linear, &rho, 1e-3).unwrap();
        let mut coarse = Walker::new(&m, Mode::Linear, &rho, 2e-3).unwrap();
        let mut rng = RngStream::new(9, 1);
        let (f, c) = observe_refinement(&mut fine, &mut coarse, &mut rng, &[0.5, 1.0], |w| w.y()).unwrap();
        for (a, b) in f.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let grid = TimeGrid::new(0.1, 1e-2).unwrap();
        let mut rng = RngStream::new(1, 1);
        let p = simulate_physical(&model_j(), &excited(), &grid, &mut rng, 5).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y,logWeight,jumpFlag\n"));
        assert_eq!(text.lines().count(), 12);
        let mut buf = Vec::new();
        p.write_csv(&mut buf, true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
