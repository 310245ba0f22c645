//! Fixed-step integration of the Hamiltonian flow and its tangent flow.
//!
//! End times are hit exactly: a request for time `t` takes `ceil(|t|/step)`
//! equal sub-steps. The tangent update is the exact derivative of the
//! discrete map, so `M` is symplectic up to round-off whatever the step.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamsys::{norm, HamiltonianSystem, PhasePoint, SINGULAR_TOL};
use crate::linalg;

pub const DEFAULT_STEP: f64 = 1e-3;
const SOLVE_TOL: f64 = 1e-12;
const SOLVE_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ImplicitMidpoint,
    /// Störmer–Verlet; only for separable systems.
    Leapfrog,
    /// Classical RK4, not symplectic. Cross-checks only.
    Rk4,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ImplicitMidpoint => "implicit-midpoint",
            Method::Leapfrog => "leapfrog",
            Method::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit-midpoint" | "midpoint" => Ok(Method::ImplicitMidpoint),
            "leapfrog" | "leapfrog-if-separable" => Ok(Method::Leapfrog),
            "rk4" | "rk4-reference" => Ok(Method::Rk4),
            _ => Err(Error::InvalidParameter(format!("unknown integration method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub step: f64,
    pub method: Method,
    pub allow_singular: bool,
    pub singular_tol: f64,
    /// Working region `|x| <= bound`; leaving it raises `OrbitEscaped`.
    pub bound: Option<f64>,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            method: Method::ImplicitMidpoint,
            allow_singular: false,
            singular_tol: SINGULAR_TOL,
            bound: None,
        }
    }
}

impl StepPolicy {
    pub fn with_step(step: f64) -> Self {
        Self { step, ..Self::default() }
    }

    pub fn method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn bounded(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn validate(&self, sys: &HamiltonianSystem) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {}", self.step)));
        }
        if self.method == Method::Leapfrog && !sys.is_separable() {
            return Err(Error::NotSeparable);
        }
        Ok(())
    }

    /// Number of equal sub-steps and their signed size for a span `t`.
    pub fn grid(&self, t: f64) -> (usize, f64) {
        if t == 0.0 {
            return (0, 0.0);
        }
        let n = (t.abs() / self.step).ceil().max(1.0) as usize;
        (n, t / n as f64)
    }
}

/// One-step map of the chosen method, with optional tangent propagation.
pub(crate) struct Stepper<'a> {
    sys: &'a HamiltonianSystem,
    method: Method,
    dim: usize,
    g: Vec<f64>,
    f: Vec<f64>,
    mid: Vec<f64>,
    next: Vec<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(sys: &'a HamiltonianSystem, method: Method) -> Self {
        let dim = sys.dim();
        Self {
            sys,
            method,
            dim,
            g: vec![0.0; dim],
            f: vec![0.0; dim],
            mid: vec![0.0; dim],
            next: vec![0.0; dim],
            hess: DMatrix::zeros(dim, dim),
        }
    }

    /// Advances `x` by `h`, updating `m ← D(step) m` when given. `t` is only
    /// used for error reporting.
    pub(crate) fn step(&mut self, x: &mut [f64], h: f64, m: Option<&mut DMatrix<f64>>, t: f64) -> Result<()> {
        match self.method {
            Method::ImplicitMidpoint => self.midpoint(x, h, m, t),
            Method::Leapfrog => self.leapfrog(x, h, m),
            Method::Rk4 => self.rk4(x, h, m),
        }
    }

    fn field(&mut self, x: &[f64]) -> Result<()> {
        self.sys.gradient_into(x, &mut self.g)?;
        linalg::apply_j(&self.g, &mut self.f);
        Ok(())
    }

    fn midpoint(&mut self, x: &mut [f64], h: f64, m: Option<&mut DMatrix<f64>>, t: f64) -> Result<()> {
        let d = self.dim;
        // Explicit Euler predictor.
        self.field(x)?;
        for i in 0..d {
            self.next[i] = x[i] + h * self.f[i];
        }
        let scale = norm(x).max(1.0);
        let mut converged = false;
        for _ in 0..SOLVE_CAP {
            for i in 0..d {
                self.mid[i] = 0.5 * (x[i] + self.next[i]);
            }
            let mid = self.mid.clone();
            self.field(&mid)?;
            let mut delta = 0.0_f64;
            for i in 0..d {
                let v = x[i] + h * self.f[i];
                delta = delta.max((v - self.next[i]).abs());
                self.next[i] = v;
            }
            if !delta.is_finite() {
                break;
            }
            if delta <= SOLVE_TOL * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            self.midpoint_newton(x, h, t)?;
        }
        for i in 0..d {
            self.mid[i] = 0.5 * (x[i] + self.next[i]);
        }
        if let Some(m) = m {
            let mid = self.mid.clone();
            self.sys.hessian_into(&mid, &mut self.hess)?;
            let a = linalg::symplectic_j(d / 2) * &self.hess;
            let id = DMatrix::<f64>::identity(d, d);
            let lhs = &id - &a * (0.5 * h);
            let rhs = (&id + &a * (0.5 * h)) * &*m;
            *m = lhs.lu().solve(&rhs).ok_or(Error::StepRejected { t, iterations: 0 })?;
        }
        x.copy_from_slice(&self.next);
        Ok(())
    }

    fn midpoint_newton(&mut self, x: &[f64], h: f64, t: f64) -> Result<()> {
        let d = self.dim;
        let n = d / 2;
        let scale = norm(x).max(1.0);
        let j = linalg::symplectic_j(n);
        // Restart from the explicit predictor: the fixed-point iterate may have diverged.
        self.field(x)?;
        for i in 0..d {
            self.next[i] = x[i] + h * self.f[i];
        }
        for _ in 0..SOLVE_CAP {
            for i in 0..d {
                self.mid[i] = 0.5 * (x[i] + self.next[i]);
            }
            let mid = self.mid.clone();
            self.field(&mid)?;
            self.sys.hessian_into(&mid, &mut self.hess)?;
            let resid = nalgebra::DVector::from_fn(d, |i, _| self.next[i] - x[i] - h * self.f[i]);
            let jac = DMatrix::<f64>::identity(d, d) - &j * &self.hess * (0.5 * h);
            let Some(dx) = jac.lu().solve(&resid) else { break };
            let mut delta = 0.0_f64;
            for i in 0..d {
                self.next[i] -= dx[i];
                delta = delta.max(dx[i].abs());
            }
            if !delta.is_finite() {
                break;
            }
            if delta <= SOLVE_TOL * scale {
                return Ok(());
            }
        }
        Err(Error::StepRejected { t, iterations: SOLVE_CAP })
    }

    fn leapfrog(&mut self, x: &mut [f64], h: f64, m: Option<&mut DMatrix<f64>>) -> Result<()> {
        let n = self.dim / 2;
        // For separable H the q-gradient depends on q only and the p-gradient on p only.
        let mut jac = m.map(|m| (m, DMatrix::<f64>::identity(self.dim, self.dim)));
        self.kick(x, 0.5 * h, jac.as_mut().map(|(_, k)| k))?;
        self.sys.gradient_into(x, &mut self.g)?;
        if let Some((_, k)) = jac.as_mut() {
            self.sys.hessian_into(x, &mut self.hess)?;
            let mut drift = DMatrix::<f64>::identity(self.dim, self.dim);
            for i in 0..n {
                for c in 0..n {
                    drift[(i, n + c)] = h * self.hess[(n + i, n + c)];
                }
            }
            *k = drift * &*k;
        }
        for i in 0..n {
            x[i] += h * self.g[n + i];
        }
        self.kick(x, 0.5 * h, jac.as_mut().map(|(_, k)| k))?;
        if let Some((m, k)) = jac {
            *m = k * &*m;
        }
        Ok(())
    }

    fn kick(&mut self, x: &mut [f64], h: f64, jac: Option<&mut DMatrix<f64>>) -> Result<()> {
        let n = self.dim / 2;
        self.sys.gradient_into(x, &mut self.g)?;
        if let Some(k) = jac {
            self.sys.hessian_into(x, &mut self.hess)?;
            let mut kick = DMatrix::<f64>::identity(self.dim, self.dim);
            for i in 0..n {
                for c in 0..n {
                    kick[(n + i, c)] = -h * self.hess[(i, c)];
                }
            }
            *k = kick * &*k;
        }
        for i in 0..n {
            x[n + i] -= h * self.g[i];
        }
        Ok(())
    }

    fn rk4(&mut self, x: &mut [f64], h: f64, m: Option<&mut DMatrix<f64>>) -> Result<()> {
        let d = self.dim;
        let j = linalg::symplectic_j(d / 2);
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(4);
        let mut kms: Vec<DMatrix<f64>> = Vec::with_capacity(4);
        let weights = [0.0, 0.5, 0.5, 1.0];
        let mut y = vec![0.0; d];
        for (stage, &c) in weights.iter().enumerate() {
            for i in 0..d {
                y[i] = x[i] + if stage == 0 { 0.0 } else { c * h * ks[stage - 1][i] };
            }
            self.field(&y)?;
            ks.push(self.f.clone());
            if let Some(m) = m.as_deref() {
                self.sys.hessian_into(&y, &mut self.hess)?;
                let mm = if stage == 0 { m.clone() } else { m + &kms[stage - 1] * (c * h) };
                kms.push(&j * &self.hess * mm);
            }
        }
        for i in 0..d {
            x[i] += h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        if let Some(m) = m {
            *m += (&kms[0] + &kms[1] * 2.0 + &kms[2] * 2.0 + &kms[3]) * (h / 6.0);
        }
        Ok(())
    }
}

/// Core loop. Calls `visit(t, x)` after every step and returns the maximal
/// energy drift.
pub(crate) fn advance(
    sys: &HamiltonianSystem,
    x: &mut [f64],
    t: f64,
    policy: &StepPolicy,
    mut m: Option<&mut DMatrix<f64>>,
    mut visit: impl FnMut(f64, &[f64]),
) -> Result<f64> {
    sys.check_dim(x)?;
    policy.validate(sys)?;
    if !policy.allow_singular {
        let mut g = vec![0.0; x.len()];
        sys.gradient_into(x, &mut g)?;
        let gn = norm(&g);
        if gn <= policy.singular_tol {
            return Err(Error::SingularStart { grad_norm: gn });
        }
    }
    let h0 = sys.energy_raw(x);
    let (steps, h) = policy.grid(t);
    let mut stepper = Stepper::new(sys, policy.method);
    let mut drift = 0.0_f64;
    for k in 0..steps {
        let tk = k as f64 * h;
        stepper.step(x, h, m.as_deref_mut(), tk)?;
        let now = if k + 1 == steps { t } else { (k + 1) as f64 * h };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OrbitEscaped { t: now });
        }
        if let Some(b) = policy.bound {
            if norm(x) > b {
                return Err(Error::OrbitEscaped { t: now });
            }
        }
        drift = drift.max((sys.energy_raw(x) - h0).abs());
        visit(now, x);
    }
    Ok(drift)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// Max of `|H(x(t)) − H(x0)|` over every step, recorded or not.
    pub energy_drift: f64,
}

impl TrajectorySample {
    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("trajectory always holds x0")
    }

    /// Writes `t,q1..qn,p1..pn,energy_error` rows.
    pub fn write_csv<W: Write>(&self, sys: &HamiltonianSystem, mut out: W) -> std::io::Result<()> {
        let n = sys.dof();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.push("energy_error".into());
        writeln!(out, "{}", header.join(","))?;
        let e0 = sys.energy_raw(self.points[0].coords());
        for (t, x) in self.times.iter().zip(&self.points) {
            let mut row = vec![format!("{t:.17e}")];
            row.extend(x.coords().iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", sys.energy_raw(x.coords()) - e0));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates from `x0` over `[0, t]` (or `[t, 0]` for negative `t`),
/// recording every step.
pub fn integrate(sys: &HamiltonianSystem, x0: &PhasePoint, t: f64, policy: &StepPolicy) -> Result<TrajectorySample> {
    integrate_every(sys, x0, t, policy, 1)
}

/// As [`integrate`] but records only every `stride`-th step and the endpoint.
pub fn integrate_every(
    sys: &HamiltonianSystem,
    x0: &PhasePoint,
    t: f64,
    policy: &StepPolicy,
    stride: usize,
) -> Result<TrajectorySample> {
    let stride = stride.max(1);
    let mut x = x0.coords().to_vec();
    let mut times = vec![0.0];
    let mut points = vec![x0.clone()];
    let (steps, _) = policy.grid(t);
    let mut k = 0usize;
    let drift = advance(sys, &mut x, t, policy, None, |tk, xk| {
        k += 1;
        if k % stride == 0 || k == steps {
            times.push(tk);
            points.push(PhasePoint::from_slice(xk).expect("finite by construction"));
        }
    })?;
    Ok(TrajectorySample { times, points, energy_drift: drift })
}

pub fn flow_at(sys: &HamiltonianSystem, x0: &PhasePoint, t: f64, policy: &StepPolicy) -> Result<PhasePoint> {
    let mut x = x0.coords().to_vec();
    advance(sys, &mut x, t, policy, None, |_, _| {})?;
    Ok(PhasePoint::from_vector_unchecked(nalgebra::DVector::from_vec(x)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFlowResult {
    pub x0: PhasePoint,
    pub x_t: PhasePoint,
    /// `DX^t` at `x0`.
    pub m: DMatrix<f64>,
    pub t: f64,
    pub symplectic_defect: f64,
    pub energy_drift: f64,
}

impl TangentFlowResult {
    /// `|M X_H(x0) − X_H(x_t)| / |X_H(x_t)|`.
    pub fn equivariance_defect(&self, sys: &HamiltonianSystem) -> Result<f64> {
        let f0 = sys.hamiltonian_field(&self.x0)?;
        let ft = sys.hamiltonian_field(&self.x_t)?;
        Ok((&self.m * f0 - &ft).norm() / ft.norm())
    }
}

pub fn tangent_flow(sys: &HamiltonianSystem, x0: &PhasePoint, t: f64, policy: &StepPolicy) -> Result<TangentFlowResult> {
    let d = sys.dim();
    let mut x = x0.coords().to_vec();
    let mut m = DMatrix::<f64>::identity(d, d);
    let drift = advance(sys, &mut x, t, policy, Some(&mut m), |_, _| {})?;
    Ok(TangentFlowResult {
        x0: x0.clone(),
        x_t: PhasePoint::from_vector_unchecked(nalgebra::DVector::from_vec(x)),
        symplectic_defect: linalg::symplectic_defect(&m),
        m,
        t,
        energy_drift: drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamsys::Builtin;
    use std::f64::consts::PI;

    fn pt(v: &[f64]) -> PhasePoint {
        PhasePoint::from_slice(v).unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let sys = Builtin::HenonHeiles.system();
        let x0 = pt(&[0.1, 0.2, 0.3, -0.1]);
        let tr = integrate(&sys, &x0, 0.0, &StepPolicy::default()).unwrap();
        assert_eq!(tr.points, vec![x0.clone()]);
        assert_eq!(tr.energy_drift, 0.0);
        assert_eq!(flow_at(&sys, &x0, 0.0, &StepPolicy::default()).unwrap(), x0);
    }

    #[test]
    fn harmonic_full_and_half_period() {
        let sys = Builtin::Harmonic.system();
        let x0 = pt(&[1.0, 0.0, 0.0, 0.0]);
        let pol = StepPolicy::default();
        let full = flow_at(&sys, &x0, 2.0 * PI, &pol).unwrap();
        assert!(full.distance(&x0) < 1e-6);
        let half = flow_at(&sys, &pt(&[1.0, 1.0, 0.0, 0.0]), PI, &pol).unwrap();
        assert!(half.distance(&pt(&[-1.0, -1.0, 0.0, 0.0])) < 1e-6);
    }

    #[test]
    fn harmonic_monodromy_is_identity() {
        let sys = Builtin::Harmonic.system();
        let r = tangent_flow(&sys, &pt(&[1.0, 0.5, 0.0, 0.2]), 2.0 * PI, &StepPolicy::default()).unwrap();
        assert!(linalg::max_abs(&(&r.m - DMatrix::identity(4, 4))) < 1e-6);
    }

    #[test]
    fn saddle_center_closed_form() {
        let sys = Builtin::SaddleCenter.system();
        let r = tangent_flow(&sys, &pt(&[1.0, 0.0, 0.0, 0.0]), 1.0, &StepPolicy::with_step(1e-4)).unwrap();
        let e = 1f64.exp();
        let hyper = DMatrix::from_row_slice(2, 2, &[e, 0.0, 0.0, 1.0 / e]);
        let expect = linalg::from_pair_order(&linalg::block_diag(&[hyper, linalg::rotation(-1.0)]));
        assert!(linalg::max_abs(&(&r.m - expect)) < 1e-8, "{}", r.m);
    }

    #[test]
    fn symplectic_on_builtins() {
        let cases = [
            (Builtin::Harmonic, vec![0.3, -0.7, 0.2, 0.9]),
            (Builtin::HenonHeiles, vec![0.0, -0.2, 0.4, 0.1]),
            (Builtin::SaddleCenter, vec![0.2, 0.4, 0.3, -0.1]),
        ];
        for (b, x) in cases {
            let sys = b.system();
            let r = tangent_flow(&sys, &pt(&x), 1.0, &StepPolicy::default()).unwrap();
            assert!(r.symplectic_defect <= 1e-8, "{}: {}", b.name(), r.symplectic_defect);
            assert!(r.equivariance_defect(&sys).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn leapfrog_requires_separable() {
        let sys = Builtin::SaddleCenter.system();
        let pol = StepPolicy::default().method(Method::Leapfrog);
        assert_eq!(flow_at(&sys, &pt(&[1.0, 0.0, 0.0, 0.0]), 1.0, &pol), Err(Error::NotSeparable));
    }

    #[test]
    fn leapfrog_tangent_is_symplectic() {
        let sys = Builtin::HenonHeiles.system();
        let pol = StepPolicy::default().method(Method::Leapfrog);
        let x0 = pt(&[0.0, -0.2, 0.4, 0.1]);
        let r = tangent_flow(&sys, &x0, 5.0, &pol).unwrap();
        assert!(r.symplectic_defect < 1e-10);
        let reference = flow_at(&sys, &x0, 5.0, &StepPolicy::with_step(1e-3).method(Method::Rk4)).unwrap();
        assert!(r.x_t.distance(&reference) < 1e-5);
    }

    #[test]
    fn rk4_tangent_matches_midpoint() {
        let sys = Builtin::HenonHeiles.system();
        let x0 = pt(&[0.0, -0.2, 0.4, 0.1]);
        let a = tangent_flow(&sys, &x0, 2.0, &StepPolicy::with_step(1e-3).method(Method::Rk4)).unwrap();
        let b = tangent_flow(&sys, &x0, 2.0, &StepPolicy::with_step(1e-4)).unwrap();
        assert!(linalg::max_abs(&(a.m - b.m)) < 1e-6);
    }

    #[test]
    fn singular_start_rejected() {
        let sys = Builtin::Harmonic.system();
        let err = flow_at(&sys, &pt(&[0.0; 4]), 1.0, &StepPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::SingularStart { .. }));
        let pol = StepPolicy { allow_singular: true, ..StepPolicy::default() };
        assert_eq!(flow_at(&sys, &pt(&[0.0; 4]), 1.0, &pol).unwrap(), pt(&[0.0; 4]));
    }

    #[test]
    fn escape_is_reported() {
        let sys = Builtin::HenonHeiles.system();
        // Energy far above the escape threshold.
        let pol = StepPolicy::default().bounded(5.0);
        let err = flow_at(&sys, &pt(&[0.0, 0.0, 2.0, 2.0]), 50.0, &pol).unwrap_err();
        assert!(matches!(err, Error::OrbitEscaped { .. }));
    }

    #[test]
    fn reversibility() {
        let sys = Builtin::HenonHeiles.system();
        let x0 = pt(&[0.05, -0.1, 0.3, 0.2]);
        let pol = StepPolicy::default();
        let fwd = flow_at(&sys, &x0, 10.0, &pol).unwrap();
        let back = flow_at(&sys, &fwd, -10.0, &pol).unwrap();
        assert!(back.distance(&x0) < 1e-6);
    }

    #[test]
    fn csv_export_header() {
        let sys = Builtin::Harmonic.system();
        let tr = integrate_every(&sys, &pt(&[1.0, 0.0, 0.0, 0.0]), 1.0, &StepPolicy::default(), 100).unwrap();
        assert_eq!(tr.times.len(), 11);
        let mut buf = Vec::new();
        tr.write_csv(&sys, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,q1,q2,p1,p2,energy_error\n"));
        assert_eq!(text.lines().count(), 12);
    }
}
