//! Deterministic layer: a priori states, the characteristic functional of
//! the output for piecewise-constant test functions, equilibrium states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, inner, CMatrix, DensityMatrix, Superoperator, C64};
use crate::model::MeasurementModel;

/// `k(t) = values[i]` on `[breakpoints[i], breakpoints[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TestFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || breakpoints.len() != values.len() + 1 {
            return Err(Error::Config("need one more breakpoint than values".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Config("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("breakpoints must be strictly ascending".into()));
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(TestFunction { breakpoints, values })
    }

    pub fn constant(k: f64, t: f64) -> Result<Self> {
        Self::new(vec![0.0, t], vec![k])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Value at time `t`; the last piece extends to the right.
    pub fn at(&self, t: f64) -> f64 {
        let i = self.breakpoints[1..].partition_point(|&b| b <= t);
        self.values[i.min(self.values.len() - 1)]
    }

    /// `(duration, k)` of each piece in time order.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints.windows(2).zip(&self.values).map(|(w, &k)| (w[1] - w[0], k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// `eta_t = exp(t L)[rho0]` on the given grid. Intervals of equal length
/// reuse one propagator.
pub fn propagate_master(model: &MeasurementModel, rho0: &DensityMatrix, times: &[f64]) -> Result<StateSeries> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("times must be ascending and nonnegative".into()));
    }
    let gen = model.liouvillian_superop();
    let mut cache: Option<(f64, Superoperator)> = None;
    let mut current = rho0.matrix().clone();
    let mut last = 0.0;
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - last;
        if dt > 0.0 {
            let prop = match &cache {
                Some((h, p)) if *h == dt => p,
                _ => {
                    cache = Some((dt, gen.exp(dt)?));
                    &cache.as_ref().unwrap().1
                }
            };
            current = linalg::hermitize(&prop.apply(&current));
        }
        last = t;
        states.push(DensityMatrix::new(current.clone())?);
    }
    Ok(StateSeries { times: times.to_vec(), states })
}

/// `exp(t L)` as a superoperator; `U(t)` of the a priori dynamics.
pub fn propagator(model: &MeasurementModel, t: f64) -> Result<Superoperator> {
    model.liouvillian_superop().exp(t)
}

/// `G_t(k)[rho0]`: the earliest piece acts first.
pub fn characteristic_operator(model: &MeasurementModel, rho0: &DensityMatrix, k: &TestFunction) -> Result<CMatrix> {
    let mut x = rho0.matrix().clone();
    for (dt, kv) in k.pieces() {
        x = model.generator_k_superop(kv).exp(dt)?.apply(&x);
    }
    Ok(x)
}

/// `<a, G_t(k)[rho0]>` at `t = k.end()`.
pub fn characteristic_functional(
    model: &MeasurementModel,
    rho0: &DensityMatrix,
    k: &TestFunction,
    a: &CMatrix,
) -> Result<C64> {
    Ok(inner(a, &characteristic_operator(model, rho0, k)?))
}

/// `Tr exp(t K(kappa))[rho0]`, the characteristic function of `Y(t)`.
pub fn increment_characteristic(model: &MeasurementModel, rho0: &DensityMatrix, kappa: f64, t: f64) -> Result<C64> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(C64::new(linalg::trace(rho0.matrix()).re, 0.0));
    }
    let x = model.generator_k_superop(kappa).exp(t)?.apply(rho0.matrix());
    Ok(linalg::trace(&x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: DensityMatrix,
    pub non_unique: bool,
    pub kernel_dim: usize,
    /// `|| L[state] ||_1`.
    pub residual: f64,
}

/// A stationary state of `L`. The kernel component of the maximally mixed
/// state is returned (the ergodic average `lim exp(tL)[1/d]` when it exists),
/// which is the unique answer when the kernel is one-dimensional.
pub fn equilibrium_state(model: &MeasurementModel) -> Option<Equilibrium> {
    let d = model.dim();
    let gen = model.liouvillian_superop().matrix;
    let n = d * d;
    let svd = gen.clone().svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-9 * smax.max(1.0);
    let kernel: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    if kernel.is_empty() {
        return None;
    }
    let k = kernel.len();
    let mut u0 = CMatrix::zeros(n, k);
    let mut v0 = CMatrix::zeros(n, k);
    for (col, &i) in kernel.iter().enumerate() {
        u0.set_column(col, &u.column(i));
        v0.set_column(col, &vt.row(i).adjoint());
    }
    let overlap = u0.adjoint() * &v0;
    let inv = overlap.try_inverse()?;
    let mixed = DensityMatrix::maximally_mixed(d);
    let proj = &v0 * (inv * (u0.adjoint() * linalg::vec_op(mixed.matrix())));
    let m = linalg::hermitize(&linalg::unvec(&proj, d));
    let tr = linalg::trace(&m).re;
    if !(tr > 1e-12) {
        return None;
    }
    let m = m.unscale(tr);
    let state = DensityMatrix::new(m).ok()?;
    let residual = linalg::trace_norm(&model.liouvillian(state.matrix()));
    if residual > 1e-8 {
        return None;
    }
    Some(Equilibrium { state, non_unique: k > 1, kernel_dim: k, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::*;
    use crate::linalg::{c, identity, max_abs_diff};
    use crate::model::fixtures::*;

    /// Classical RK4 on `dX/dt = K(k(t))[X]`, independent of the exponential route.
    fn rk4(model: &MeasurementModel, rho0: &CMatrix, k: &TestFunction, steps_per_unit: usize) -> CMatrix {
        let mut x = rho0.clone();
        for (dur, kv) in k.pieces() {
            let n = ((dur * steps_per_unit as f64).ceil() as usize).max(1);
            let h = dur / n as f64;
            let f = |y: &CMatrix| model.generator_k(kv, y);
            for _ in 0..n {
                let k1 = f(&x);
                let k2 = f(&(&x + k1.scale(h / 2.0)));
                let k3 = f(&(&x + k2.scale(h / 2.0)));
                let k4 = f(&(&x + k3.scale(h)));
                x += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
            }
        }
        x
    }

    #[test]
    fn test_function_lookup() {
        let k = TestFunction::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(k.at(0.0), 1.0);
        assert_eq!(k.at(0.49), 1.0);
        assert_eq!(k.at(0.5), 2.0);
        assert_eq!(k.at(3.0), 2.0);
        assert!(TestFunction::new(vec![0.0, 1.0], vec![]).is_err());
        assert!(TestFunction::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(TestFunction::new(vec![0.1, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn master_equation_examples() {
        let rho = mixed_state();
        let s = propagate_master(&model_0(), &rho, &[0.0, 0.5, 1.0]).unwrap();
        for st in &s.states {
            assert!(max_abs_diff(st.matrix(), rho.matrix()) < 1e-15);
        }
        let s = propagate_master(&model_d(), &excited(), &[1.0]).unwrap();
        assert!((s.states[0].matrix()[(0, 0)].re - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn master_equation_matches_rk4() {
        let zero = TestFunction::constant(0.0, 2.0).unwrap();
        for (_, m) in all() {
            let rho = mixed_state();
            let s = propagate_master(&m, &rho, &[2.0]).unwrap();
            let oracle = rk4(&m, rho.matrix(), &zero, 2000);
            assert!(max_abs_diff(s.states[0].matrix(), &oracle) < 1e-10);
        }
    }

    #[test]
    fn characteristic_examples() {
        let rho = mixed_state();
        let one = identity(2);
        for (_, m) in all() {
            let k = TestFunction::constant(0.0, 1.0).unwrap();
            let g = characteristic_functional(&m, &rho, &k, &one).unwrap();
            assert!((g - c(1.0, 0.0)).norm() < 1e-12);
        }
        let k = TestFunction::constant(1.0, 1.0).unwrap();
        let g = characteristic_functional(&model_0(), &rho, &k, &one).unwrap();
        assert!((g - c(-0.5, 1.0).exp()).norm() < 1e-12);

        let oracle = linalg::trace(&rk4(&model_j(), excited().matrix(), &k, 4000));
        let g = characteristic_functional(&model_j(), &excited(), &k, &one).unwrap();
        assert!((g - oracle).norm() < 1e-8);
    }

    #[test]
    fn increment_examples() {
        let rho = mixed_state();
        assert!((increment_characteristic(&model_d(), &rho, 0.0, 1.0).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(increment_characteristic(&model_d(), &rho, 3.0, 0.0).unwrap(), c(1.0, 0.0));
        for kappa in [0.3, 1.0, 2.5] {
            let g = increment_characteristic(&model_i(), &rho, kappa, 1.0).unwrap();
            let expected = (c(kappa.cos() - 1.0, kappa.sin()) - c(0.0, kappa * 0.5)).exp();
            assert!((g - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn two_piece_factorization() {
        for m in [model_j(), model_d()] {
            let rho = mixed_state();
            let (s, t, k1, k2) = (0.4, 1.0, 0.7, -1.3);
            let two = TestFunction::new(vec![0.0, s, t], vec![k1, k2]).unwrap();
            let g = characteristic_functional(&m, &rho, &two, &identity(2)).unwrap();
            let inner_ = m.generator_k_superop(k1).exp(s).unwrap().apply(rho.matrix());
            let outer = m.generator_k_superop(k2).exp(t - s).unwrap().apply(&inner_);
            assert!((g - linalg::trace(&outer)).norm() < 1e-12);

            let same = TestFunction::new(vec![0.0, s, t], vec![k1, k1]).unwrap();
            let g = characteristic_functional(&m, &rho, &same, &identity(2)).unwrap();
            assert!((g - increment_characteristic(&m, &rho, k1, t).unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn characteristic_bounded_by_one() {
        for (_, m) in all() {
            for kappa in [-3.0, -0.5, 0.2, 1.0, 4.0] {
                for t in [0.1, 1.0, 5.0] {
                    let g = increment_characteristic(&m, &mixed_state(), kappa, t).unwrap();
                    assert!(g.norm() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn equilibrium_examples() {
        let e = equilibrium_state(&model_0()).unwrap();
        assert!(e.non_unique);
        assert!(max_abs_diff(e.state.matrix(), DensityMatrix::maximally_mixed(2).matrix()) < 1e-12);

        let e = equilibrium_state(&model_d()).unwrap();
        assert!(!e.non_unique);
        assert!(max_abs_diff(e.state.matrix(), ground().matrix()) < 1e-10);

        // long-time limit of the master equation as an oracle
        for m in [model_d(), model_j()] {
            let e = equilibrium_state(&m).unwrap();
            let far = propagate_master(&m, &DensityMatrix::maximally_mixed(2), &[200.0]).unwrap();
            assert!(max_abs_diff(e.state.matrix(), far.states[0].matrix()) < 1e-9);
            assert!(e.residual < 1e-10);
        }
    }

    #[test]
    fn model_j_equilibrium_value() {
        // kernel of D[sigma_minus - 1]; rows of the 2x2 linear system solved by hand
        let e = equilibrium_state(&model_j()).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(1.0 / 3.0, 0.0), c(1.0 / 3.0, 0.0), c(1.0 / 3.0, 0.0), c(2.0 / 3.0, 0.0)]);
        assert!(max_abs_diff(e.state.matrix(), &expected) < 1e-10);
    }
}
