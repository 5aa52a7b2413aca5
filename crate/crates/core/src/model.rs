//! The physical model of a continual measurement and every operator built
//! from it: the Liouvillian, the Lévy-Khinchin generator `K(k)`, the jump
//! maps `J[.](z)`, the jump effects and the drift of the output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, c, identity, inner, json, CMatrix, DensityMatrix, Superoperator, I};

/// One atom `(z, n)` of the jump measure, with the effect operator `V = J + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpChannel {
    pub z: f64,
    pub n: u32,
    pub nu: f64,
    #[serde(rename = "V", with = "json")]
    pub v: CMatrix,
}

/// The model file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawModel {
    pub dim: usize,
    #[serde(rename = "H", with = "json")]
    pub h: CMatrix,
    #[serde(rename = "Ls", with = "json::list")]
    pub ls: Vec<CMatrix>,
    #[serde(rename = "R", with = "json")]
    pub r_op: CMatrix,
    pub c: f64,
    pub r: f64,
    pub b: f64,
    pub channels: Vec<JumpChannel>,
}

impl RawModel {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// All channels sharing one jump amplitude `z`.
#[derive(Debug, Clone)]
pub struct Amplitude {
    pub z: f64,
    /// `mu(z) = sum_n nu(z, n)`.
    pub mu: f64,
    /// `(nu(z,n) / mu(z), V_{z,n})`.
    pub atoms: Vec<(f64, CMatrix)>,
    /// `sum_n (nu / mu) V^dag V`.
    pub effect: CMatrix,
    /// Largest eigenvalue of `effect`.
    pub effect_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiCompletenessReport {
    pub c1_holds: bool,
    pub c2_holds: bool,
    pub max_deviation_c2: f64,
}

/// A validated measurement model. Immutable; all derived operators are
/// computed once in [`MeasurementModel::validate`].
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    raw: RawModel,
    amplitudes: Vec<Amplitude>,
    /// `sum_j L_j^dag L_j + R^dag R + sum_atoms nu (V-1)^dag (V-1)`.
    decay: CMatrix,
    /// Effective generator of the no-jump Kraus step (see [`Self::no_jump_generator`]).
    no_jump: CMatrix,
    r_dag: CMatrix,
    r_squared: CMatrix,
    r_sym: CMatrix,
    jump_ops: Vec<(f64, CMatrix, CMatrix)>,
}

pub fn phi1(z: f64, b: f64) -> f64 {
    z * z / (b * b + z * z)
}

pub fn phi2(z: f64, b: f64) -> f64 {
    b * b / (b * b + z * z)
}

impl MeasurementModel {
    pub fn validate(raw: RawModel) -> Result<Self> {
        let d = raw.dim;
        if d == 0 {
            return Err(Error::BadShape("dim must be positive".into()));
        }
        let shape_ok = |m: &CMatrix| m.nrows() == d && m.ncols() == d;
        if !shape_ok(&raw.h) {
            return Err(Error::BadShape(format!("H is {}x{}, dim is {d}", raw.h.nrows(), raw.h.ncols())));
        }
        if !shape_ok(&raw.r_op) {
            return Err(Error::BadShape("R has the wrong shape".into()));
        }
        for (j, l) in raw.ls.iter().enumerate() {
            if !shape_ok(l) {
                return Err(Error::BadShape(format!("L{j} has the wrong shape")));
            }
        }
        for ch in &raw.channels {
            if !shape_ok(&ch.v) {
                return Err(Error::BadShape(format!("V for channel (z={}, n={}) has the wrong shape", ch.z, ch.n)));
            }
        }
        let all_finite = linalg::is_finite(&raw.h)
            && linalg::is_finite(&raw.r_op)
            && raw.ls.iter().all(linalg::is_finite)
            && raw.channels.iter().all(|ch| linalg::is_finite(&ch.v) && ch.z.is_finite() && ch.nu.is_finite())
            && raw.c.is_finite()
            && raw.r.is_finite()
            && raw.b.is_finite();
        if !all_finite {
            return Err(Error::NonFinite);
        }
        let herm_err = linalg::hermiticity_error(&raw.h);
        if herm_err > 1e-10 {
            return Err(Error::NonHermitianH(herm_err));
        }
        if !(raw.b > 0.0) {
            return Err(Error::NonPositiveB(raw.b));
        }
        for (k, ch) in raw.channels.iter().enumerate() {
            if ch.z == 0.0 {
                return Err(Error::ZeroAmplitude);
            }
            if !(ch.nu > 0.0) {
                return Err(Error::NonPositiveWeight { z: ch.z, n: ch.n, nu: ch.nu });
            }
            if ch.n == 0 {
                return Err(Error::BadShape("channel labels n start at 1".into()));
            }
            if raw.channels[..k].iter().any(|o| o.z == ch.z && o.n == ch.n) {
                return Err(Error::DuplicateChannel { z: ch.z, n: ch.n });
            }
        }
        debug_assert!(raw.channels.iter().all(|ch| (phi1(ch.z, raw.b) + phi2(ch.z, raw.b) - 1.0).abs() < 1e-15));

        // group channels by amplitude, in order of first appearance
        let mut amplitudes: Vec<Amplitude> = Vec::new();
        for ch in &raw.channels {
            match amplitudes.iter_mut().find(|a| a.z == ch.z) {
                Some(a) => {
                    a.mu += ch.nu;
                    a.atoms.push((ch.nu, ch.v.clone()));
                }
                None => amplitudes.push(Amplitude {
                    z: ch.z,
                    mu: ch.nu,
                    atoms: vec![(ch.nu, ch.v.clone())],
                    effect: linalg::zeros(d),
                    effect_norm: 0.0,
                }),
            }
        }
        for a in &mut amplitudes {
            for atom in &mut a.atoms {
                atom.0 /= a.mu;
            }
            let mut effect = linalg::zeros(d);
            for (w, v) in &a.atoms {
                effect += (v.adjoint() * v).scale(*w);
            }
            a.effect = linalg::hermitize(&effect);
            let (vals, _) = linalg::eigh(&a.effect);
            a.effect_norm = vals.last().copied().unwrap_or(0.0).max(0.0);
        }

        let one = identity(d);
        let mut decay = raw.r_op.adjoint() * &raw.r_op;
        for l in &raw.ls {
            decay += l.adjoint() * l;
        }
        let mut jump_ops = Vec::new();
        let mut g2 = linalg::zeros(d);
        for ch in &raw.channels {
            let j = &ch.v - &one;
            decay += (j.adjoint() * &j).scale(ch.nu);
            g2 += (ch.v.adjoint() * &ch.v - &one).scale(0.5 * ch.nu) + (&ch.v - ch.v.adjoint()).scale(0.5 * ch.nu);
            let jd = j.adjoint();
            jump_ops.push((ch.nu, j, jd));
        }
        let mut ll = raw.r_op.adjoint() * &raw.r_op;
        for l in &raw.ls {
            ll += l.adjoint() * l;
        }
        let no_jump = raw.h.map(|x| x * I) + ll.scale(0.5) + g2;
        let r_dag = raw.r_op.adjoint();
        let r_squared = &raw.r_op * &raw.r_op;
        let r_sym = &raw.r_op + &r_dag;

        Ok(MeasurementModel { raw, amplitudes, decay, no_jump, r_dag, r_squared, r_sym, jump_ops })
    }

    pub fn raw(&self) -> &RawModel {
        &self.raw
    }

    pub fn dim(&self) -> usize {
        self.raw.dim
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.raw.h
    }

    pub fn lindblad_ops(&self) -> &[CMatrix] {
        &self.raw.ls
    }

    pub fn r_op(&self) -> &CMatrix {
        &self.raw.r_op
    }

    pub fn r_dag(&self) -> &CMatrix {
        &self.r_dag
    }

    /// `R^2`, used by the Milstein correction of the Kraus step.
    pub fn r_squared(&self) -> &CMatrix {
        &self.r_squared
    }

    /// `R + R^dag`.
    pub fn r_sym(&self) -> &CMatrix {
        &self.r_sym
    }

    pub fn c(&self) -> f64 {
        self.raw.c
    }

    pub fn r(&self) -> f64 {
        self.raw.r
    }

    pub fn b(&self) -> f64 {
        self.raw.b
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.raw.channels
    }

    pub fn amplitudes(&self) -> &[Amplitude] {
        &self.amplitudes
    }

    pub fn phi2(&self, z: f64) -> f64 {
        phi2(z, self.raw.b)
    }

    pub fn phi1(&self, z: f64) -> f64 {
        phi1(z, self.raw.b)
    }

    /// `sum_z phi2(z) z mu(z)`, the compensating drift of the output.
    pub fn compensator_drift(&self) -> f64 {
        self.amplitudes.iter().fold(0.0, |s, a| s + self.phi2(a.z) * a.z * a.mu)
    }

    /// `sum_z mu(z)`.
    pub fn total_jump_rate(&self) -> f64 {
        self.amplitudes.iter().fold(0.0, |s, a| s + a.mu)
    }

    /// `G` such that the drift of the linear equation between jumps is
    /// `-G s - s G^dag + sum_j L_j s L_j^dag + R s R^dag`.
    pub fn no_jump_generator(&self) -> &CMatrix {
        &self.no_jump
    }

    pub fn amplitude(&self, z: f64) -> Result<&Amplitude> {
        self.amplitudes.iter().find(|a| a.z == z).ok_or(Error::UnknownAmplitude(z))
    }

    /// `L[tau] = L0 + L1 + L2`.
    pub fn liouvillian(&self, tau: &CMatrix) -> CMatrix {
        let h = &self.raw.h;
        let mut out = (h * tau - tau * h).map(|x| -I * x);
        out -= (&self.decay * tau + tau * &self.decay).scale(0.5);
        for l in &self.raw.ls {
            out += l * tau * l.adjoint();
        }
        out += &self.raw.r_op * tau * &self.r_dag;
        for (nu, j, jd) in &self.jump_ops {
            out += (j * tau * jd).scale(*nu);
        }
        out
    }

    pub fn liouvillian_superop(&self) -> Superoperator {
        linalg::vectorize_superoperator(|x| self.liouvillian(x), self.dim())
    }

    /// Lévy-Khinchin generator `K(k)[tau]`.
    pub fn generator_k(&self, k: f64, tau: &CMatrix) -> CMatrix {
        let (c_, r) = (self.raw.c, self.raw.r);
        let mut out = self.liouvillian(tau);
        out += tau.map(|x| x * c(-0.5 * r * r * k * k, k * c_));
        out += (&self.raw.r_op * tau + tau * &self.r_dag).map(|x| x * c(0.0, k * r));
        for a in &self.amplitudes {
            let phase = c((k * a.z).cos() - 1.0, (k * a.z).sin());
            out += self.jump_map_amp(a, tau).map(|x| x * phase * a.mu);
            out += tau.map(|x| x * c(0.0, -k * a.z * self.phi2(a.z) * a.mu));
        }
        out
    }

    pub fn generator_k_superop(&self, k: f64) -> Superoperator {
        linalg::vectorize_superoperator(|x| self.generator_k(k, x), self.dim())
    }

    fn jump_map_amp(&self, a: &Amplitude, tau: &CMatrix) -> CMatrix {
        let mut out = linalg::zeros(self.dim());
        for (w, v) in &a.atoms {
            out += (v * tau * v.adjoint()).scale(*w);
        }
        out
    }

    /// `J[tau](z) = sum_n (nu/mu) V tau V^dag`.
    pub fn jump_map(&self, z: f64, tau: &CMatrix) -> Result<CMatrix> {
        Ok(self.jump_map_amp(self.amplitude(z)?, tau))
    }

    /// The jump effect operator for amplitude `z`.
    pub fn jump_effect(&self, z: f64) -> Result<&CMatrix> {
        Ok(&self.amplitude(z)?.effect)
    }

    /// `I(z) = <jump effect, tau>`.
    pub fn jump_intensity(&self, z: f64, tau: &CMatrix) -> Result<f64> {
        Ok(inner(self.jump_effect(z)?, tau).re)
    }

    /// The post-jump state `J[tau](z) / Tr J[tau](z)`.
    pub fn normalized_jump(&self, z: f64, tau: &DensityMatrix, jump_tol: f64) -> Result<DensityMatrix> {
        let out = self.jump_map(z, tau.matrix())?;
        let tr = linalg::trace(&out).re;
        if tr <= jump_tol {
            return Err(Error::DeadChannel(z, tr));
        }
        Ok(DensityMatrix::new_unchecked(linalg::hermitize(&out).unscale(tr)))
    }

    /// `m = Tr{(R + R^dag) tau}`.
    pub fn mean_drift(&self, tau: &CMatrix) -> f64 {
        inner(&self.r_sym, tau).re
    }

    pub fn quasi_completeness(&self) -> QuasiCompletenessReport {
        let c1_holds = self.raw.ls.iter().all(|l| l.iter().all(|x| x.norm() <= 1e-12));
        let mut dev: f64 = 0.0;
        for a in &self.amplitudes {
            let first = &a.atoms[0].1;
            for (_, v) in &a.atoms[1..] {
                dev = dev.max(linalg::max_abs_diff(first, v));
            }
        }
        QuasiCompletenessReport { c1_holds, c2_holds: dev <= 1e-10, max_deviation_c2: dev }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(&self.raw).expect("model serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// The four two-level reference models.
pub mod fixtures {
    use super::*;
    use crate::linalg::qubit::*;

    fn base() -> RawModel {
        RawModel {
            dim: 2,
            h: linalg::zeros(2),
            ls: vec![],
            r_op: linalg::zeros(2),
            c: 0.0,
            r: 0.0,
            b: 1.0,
            channels: vec![],
        }
    }

    /// Output is Brownian motion with drift, decoupled from the system.
    pub fn raw_model_0() -> RawModel {
        RawModel { c: 1.0, r: 1.0, ..base() }
    }

    /// Jumps that carry no information: `V = 1`.
    pub fn raw_model_i() -> RawModel {
        RawModel { channels: vec![JumpChannel { z: 1.0, n: 1, nu: 1.0, v: identity(2) }], ..base() }
    }

    /// Diffusive qubit: `H = sigma_z / 2`, `R = sigma_minus`, `r = 1`.
    pub fn raw_model_d() -> RawModel {
        RawModel { h: sigma_z().scale(0.5), r_op: sigma_minus(), r: 1.0, ..base() }
    }

    /// Counting qubit: one channel at `z = 1` with `V = sigma_minus`.
    pub fn raw_model_j() -> RawModel {
        RawModel { channels: vec![JumpChannel { z: 1.0, n: 1, nu: 1.0, v: sigma_minus() }], ..base() }
    }

    pub fn model_0() -> MeasurementModel {
        MeasurementModel::validate(raw_model_0()).unwrap()
    }

    pub fn model_i() -> MeasurementModel {
        MeasurementModel::validate(raw_model_i()).unwrap()
    }

    pub fn model_d() -> MeasurementModel {
        MeasurementModel::validate(raw_model_d()).unwrap()
    }

    pub fn model_j() -> MeasurementModel {
        MeasurementModel::validate(raw_model_j()).unwrap()
    }

    /// All four fixtures with their short names.
    pub fn all() -> Vec<(&'static str, MeasurementModel)> {
        vec![("MODEL-0", model_0()), ("MODEL-I", model_i()), ("MODEL-D", model_d()), ("MODEL-J", model_j())]
    }

    /// A generic full-rank, non-diagonal qubit state.
    pub fn mixed_state() -> DensityMatrix {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.6, 0.0), c(0.3, 0.1), c(0.3, -0.1), c(0.4, 0.0)]);
        DensityMatrix::new(m).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::linalg::qubit::*;
    use crate::linalg::{max_abs_diff, zeros};

    fn random_tau(seed: u64) -> CMatrix {
        // small LCG so the test needs no RNG plumbing
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let g = CMatrix::from_fn(2, 2, |_, _| c(next(), next()));
        &g * g.adjoint()
    }

    #[test]
    fn validates_fixtures() {
        let d = model_d();
        assert_eq!(d.channels().len(), 0);
        let j = model_j();
        assert_eq!(j.amplitude(1.0).unwrap().mu, 1.0);
        assert!(max_abs_diff(j.jump_effect(1.0).unwrap(), &(sigma_plus() * sigma_minus())) < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let mut raw = raw_model_j();
        raw.channels[0].z = 0.0;
        assert_eq!(MeasurementModel::validate(raw).unwrap_err(), Error::ZeroAmplitude);

        let mut raw = raw_model_j();
        raw.channels[0].nu = 0.0;
        assert!(matches!(MeasurementModel::validate(raw), Err(Error::NonPositiveWeight { .. })));

        let mut raw = raw_model_0();
        raw.b = 0.0;
        assert!(matches!(MeasurementModel::validate(raw), Err(Error::NonPositiveB(_))));

        let mut raw = raw_model_d();
        raw.h = sigma_minus();
        assert!(matches!(MeasurementModel::validate(raw), Err(Error::NonHermitianH(_))));

        let mut raw = raw_model_d();
        raw.r_op = zeros(3);
        assert!(matches!(MeasurementModel::validate(raw), Err(Error::BadShape(_))));

        let mut raw = raw_model_j();
        raw.channels.push(raw.channels[0].clone());
        assert!(matches!(MeasurementModel::validate(raw), Err(Error::DuplicateChannel { .. })));
    }

    #[test]
    fn liouvillian_vanishes_for_decoupled_and_infoless() {
        for m in [model_0(), model_i()] {
            for s in 0..5 {
                assert_eq!(m.liouvillian(&random_tau(s)), zeros(2));
            }
        }
    }

    #[test]
    fn liouvillian_model_d_excited() {
        let m = model_d();
        let tau = excited().into_matrix();
        let h = sigma_z().scale(0.5);
        // hand expansion: -i[H, tau] + s- tau s+ - 1/2 {s+ s-, tau}
        let sp = sigma_plus();
        let sm = sigma_minus();
        let expected = (&h * &tau - &tau * &h).map(|x| -I * x) + &sm * &tau * &sp
            - (&sp * &sm * &tau + &tau * &sp * &sm).scale(0.5);
        let got = m.liouvillian(&tau);
        assert!(max_abs_diff(&got, &expected) < 1e-15);
        assert!(linalg::trace(&got).norm() < 1e-15);
        // decay: d/dt excited population = -1
        assert!((got[(0, 0)].re + 1.0).abs() < 1e-15);
        assert!((got[(1, 1)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn generator_at_zero_is_liouvillian() {
        for (_, m) in all() {
            for s in 0..5 {
                let tau = random_tau(s);
                assert_eq!(m.generator_k(0.0, &tau), m.liouvillian(&tau));
            }
        }
    }

    #[test]
    fn generator_model_0() {
        let m = model_0();
        let tau = mixed_state().into_matrix();
        let got = m.generator_k(1.0, &tau);
        let expected = tau.map(|x| x * c(-0.5, 1.0));
        assert!(max_abs_diff(&got, &expected) < 1e-15);
    }

    #[test]
    fn generator_model_j_at_pi() {
        let m = model_j();
        let tau = excited().into_matrix();
        let k = std::f64::consts::PI;
        let sm = sigma_minus();
        let jump = &sm * &tau * sigma_plus();
        let expected = m.liouvillian(&tau)
            + jump.map(|x| x * (c(k.cos(), k.sin()) - 1.0))
            + tau.map(|x| x * c(0.0, -k * phi2(1.0, 1.0)));
        assert!(max_abs_diff(&m.generator_k(k, &tau), &expected) < 1e-14);
    }

    #[test]
    fn jump_map_examples() {
        let rho = mixed_state().into_matrix();
        assert_eq!(model_i().jump_map(1.0, &rho).unwrap(), rho);
        let out = model_j().jump_map(1.0, excited().matrix()).unwrap();
        assert_eq!(out, ground().into_matrix());
        assert!(matches!(model_j().jump_map(2.0, &rho), Err(Error::UnknownAmplitude(_))));

        let mut raw = raw_model_j();
        raw.channels = vec![
            JumpChannel { z: 1.0, n: 1, nu: 0.5, v: identity(2) },
            JumpChannel { z: 1.0, n: 2, nu: 0.5, v: sigma_x() },
        ];
        let two = MeasurementModel::validate(raw).unwrap();
        let out = two.jump_map(1.0, excited().matrix()).unwrap();
        assert!(max_abs_diff(&out, &linalg::identity(2).scale(0.5)) < 1e-15);
        assert!(!two.quasi_completeness().c2_holds);
        assert!((two.quasi_completeness().max_deviation_c2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jump_effect_and_intensity() {
        assert_eq!(model_i().jump_effect(1.0).unwrap(), &identity(2));
        let mm = DensityMatrix::maximally_mixed(2);
        assert!((model_j().jump_intensity(1.0, mm.matrix()).unwrap() - 0.5).abs() < 1e-15);
        for s in 0..10 {
            let tau = random_tau(s);
            let a = linalg::trace(&model_j().jump_map(1.0, &tau).unwrap()).re;
            let b = model_j().jump_intensity(1.0, &tau).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_jump_examples() {
        let tol = 1e-12;
        let rho = mixed_state();
        let out = model_i().normalized_jump(1.0, &rho, tol).unwrap();
        assert!(max_abs_diff(out.matrix(), rho.matrix()) < 1e-15);
        assert_eq!(model_j().normalized_jump(1.0, &excited(), tol).unwrap(), ground());
        assert!(matches!(model_j().normalized_jump(1.0, &ground(), tol), Err(Error::DeadChannel(..))));
    }

    #[test]
    fn mean_drift_examples() {
        assert_eq!(model_0().mean_drift(mixed_state().matrix()), 0.0);
        let mm = DensityMatrix::maximally_mixed(2);
        assert!(model_d().mean_drift(mm.matrix()).abs() < 1e-15);
        assert!((model_d().mean_drift(plus().matrix()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quasi_completeness_examples() {
        let q = model_d().quasi_completeness();
        assert!(q.c1_holds && q.c2_holds);
        let q = model_j().quasi_completeness();
        assert!(q.c1_holds && q.c2_holds);
        let mut raw = raw_model_d();
        raw.ls = vec![sigma_z()];
        let q = MeasurementModel::validate(raw).unwrap().quasi_completeness();
        assert!(!q.c1_holds);
    }

    #[test]
    fn model_file_roundtrip_is_bit_exact() {
        let mut raw = raw_model_j();
        raw.h = CMatrix::from_row_slice(2, 2, &[c(0.1, 0.0), c(1.0 / 3.0, 0.7), c(1.0 / 3.0, -0.7), c(-2e-17, 0.0)]);
        raw.ls = vec![sigma_z().scale(0.3)];
        let text = raw.to_json();
        let back = RawModel::from_json(&text).unwrap();
        assert_eq!(back, raw);
        assert_eq!(back.to_json(), text);
    }
}
