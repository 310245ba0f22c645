//! Periodic orbits: Newton on section returns, symplectic spectra,
//! elliptic/hyperbolic classification and the 2×2 spectral nudge.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow::StepPolicy;
use crate::hamsys::{norm, HamiltonianSystem, PhasePoint};
use crate::linalg;
use crate::poincare::{self, FrameRule, Section};

/// Unit band for exact or linear inputs.
pub const UNIT_BAND_EXACT: f64 = 1e-6;
/// Unit band for monodromies obtained by integration.
pub const UNIT_BAND_INTEGRATED: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Hyperbolic,
    Elliptic(usize),
    Degenerate,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Hyperbolic => f.write_str("hyperbolic"),
            Classification::Elliptic(k) => write!(f, "{k}-elliptic"),
            Classification::Degenerate => f.write_str("degenerate"),
        }
    }
}

impl Serialize for Classification {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Eigenvalues grouped into orbits of `σ ↦ 1/σ` and `σ ↦ conj σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumQuadruples {
    pub groups: Vec<Vec<Complex64>>,
    pub unit_band: f64,
    /// Max over matched reciprocal partners of `|σ σ′ − 1|`.
    pub pairing_defect: f64,
    /// Max over eigenvalues of the distance from `conj σ` to the spectrum.
    pub conjugation_defect: f64,
}

impl SpectrumQuadruples {
    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(1.0)
}

/// Groups the spectrum of `a`. Groups have two members (reciprocal pairs,
/// conjugate unit pairs, or copies of `±1`) or four.
pub fn eigen_quadruples(a: &DMatrix<f64>, unit_band: f64) -> Result<SpectrumQuadruples> {
    let eig = linalg::eigenvalues(a)?;
    Ok(group_spectrum(&eig, unit_band))
}

pub fn group_spectrum(eig: &[Complex64], unit_band: f64) -> SpectrumQuadruples {
    let mut order: Vec<usize> = (0..eig.len()).collect();
    order.sort_by(|&i, &j| {
        eig[j].norm().total_cmp(&eig[i].norm()).then(eig[j].im.total_cmp(&eig[i].im)).then(i.cmp(&j))
    });
    let coincide = unit_band.max(1e-9);
    let mut used = vec![false; eig.len()];
    let mut groups = Vec::new();
    let mut pairing = 0.0_f64;
    for &i in &order {
        if used[i] {
            continue;
        }
        used[i] = true;
        let s = eig[i];
        let mut targets = vec![s.conj(), s.inv(), s.conj().inv()];
        let mut distinct: Vec<Complex64> = Vec::new();
        for t in targets.drain(..) {
            if !close(t, s, coincide) && !distinct.iter().any(|&d| close(d, t, coincide)) {
                distinct.push(t);
            }
        }
        if distinct.is_empty() {
            // σ ≈ ±1 pairs with another copy of itself.
            distinct.push(s);
        }
        let mut group = vec![s];
        let mut recip_partner = None;
        for t in distinct {
            let best = (0..eig.len())
                .filter(|&k| !used[k])
                .min_by(|&a, &b| (eig[a] - t).norm().total_cmp(&(eig[b] - t).norm()).then(a.cmp(&b)));
            if let Some(k) = best {
                used[k] = true;
                group.push(eig[k]);
                if close(t, s.inv(), coincide) && recip_partner.is_none() {
                    recip_partner = Some(eig[k]);
                }
            }
        }
        let partner = recip_partner.unwrap_or_else(|| {
            // Unmatched: fall back to the nearest eigenvalue anywhere.
            *eig.iter().min_by(|a, b| (*a - s.inv()).norm().total_cmp(&(*b - s.inv()).norm())).unwrap_or(&s)
        });
        pairing = pairing.max((s * partner - 1.0).norm());
        groups.push(group);
    }
    let conjugation = eig
        .iter()
        .map(|s| eig.iter().map(|t| (t - s.conj()).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    SpectrumQuadruples { groups, unit_band, pairing_defect: pairing, conjugation_defect: conjugation }
}

/// Hyperbolic: nothing in the unit band. `k`-elliptic: exactly `2k`
/// eigenvalues in the band, each simple (separation `≥ 10 τ_u`) and
/// non-real (`|Im| ≥ 10 τ_u`). Anything else is degenerate.
pub fn classify_spectrum(eig: &[Complex64], unit_band: f64) -> Classification {
    let unit: Vec<usize> = (0..eig.len()).filter(|&i| (eig[i].norm() - 1.0).abs() <= unit_band).collect();
    if unit.is_empty() {
        return Classification::Hyperbolic;
    }
    let sep = 10.0 * unit_band;
    for &i in &unit {
        if eig[i].im.abs() < sep {
            return Classification::Degenerate;
        }
        if (0..eig.len()).any(|j| j != i && (eig[j] - eig[i]).norm() < sep) {
            return Classification::Degenerate;
        }
    }
    if unit.len() % 2 != 0 {
        return Classification::Degenerate;
    }
    Classification::Elliptic(unit.len() / 2)
}

pub fn classify_matrix(a: &DMatrix<f64>, unit_band: f64) -> Result<Classification> {
    Ok(classify_spectrum(&linalg::eigenvalues(a)?, unit_band))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    pub p: PhasePoint,
    pub period: f64,
    /// Linear Poincaré map over one period, in the canonical frame at `p`.
    pub monodromy: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub residual: f64,
    pub unit_band: f64,
    pub classification: Classification,
    pub newton_iterations: usize,
}

impl PeriodicOrbit {
    pub fn classify(&self, unit_band: f64) -> Result<Classification> {
        classify_matrix(&self.monodromy, unit_band)
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        linalg::eigenvalues(&self.monodromy)
    }

    pub fn symplectic_defect(&self) -> f64 {
        linalg::form_defect(&self.monodromy, &self.omega, &self.omega)
    }

    pub fn report(&self) -> Result<OrbitReport> {
        let mut eig = self.eigenvalues()?;
        eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
        Ok(OrbitReport {
            point: self.p.coords().to_vec(),
            period: self.period,
            residual: self.residual,
            eigenvalues: eig.iter().map(|s| EigenEntry { re: s.re, im: s.im, modulus: s.norm() }).collect(),
            classification: self.classification,
            unit_band: self.unit_band,
            symplectic_defect: self.symplectic_defect(),
            newton_iterations: self.newton_iterations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenEntry {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitReport {
    pub point: Vec<f64>,
    pub period: f64,
    pub residual: f64,
    pub eigenvalues: Vec<EigenEntry>,
    pub classification: Classification,
    pub unit_band: f64,
    pub symplectic_defect: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSearch {
    pub max_newton: usize,
    pub tol: f64,
    pub step: StepPolicy,
    /// Time budget for each section return.
    pub return_budget: f64,
    pub unit_band: f64,
}

impl Default for OrbitSearch {
    fn default() -> Self {
        Self {
            max_newton: 30,
            tol: 1e-10,
            step: StepPolicy::default(),
            return_budget: 100.0,
            unit_band: UNIT_BAND_INTEGRATED,
        }
    }
}

/// Orthonormal basis of the hyperplane `normal⊥`.
fn section_tangent(normal: &[f64]) -> DMatrix<f64> {
    let d = normal.len();
    let n = DVector::from_column_slice(normal).normalize();
    let drop = (0..d).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()).then(b.cmp(&a))).unwrap_or(0);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in (0..d).filter(|&k| k != drop) {
        let mut v = DVector::<f64>::zeros(d);
        v[k] = 1.0;
        for _ in 0..2 {
            let p = n.dot(&v);
            v.axpy(-p, &n, 1.0);
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        cols.push(v.normalize());
    }
    DMatrix::from_columns(&cols)
}

/// Newton iteration on `R(x) = x` for the first-return map `R` of `section`,
/// with the energy pinned at `H(seed)`.
pub fn find_periodic(
    sys: &HamiltonianSystem,
    seed: &PhasePoint,
    section: &Section,
    search: &OrbitSearch,
) -> Result<PeriodicOrbit> {
    sys.check_dim(seed.coords())?;
    section.validate(sys.dim())?;
    let grad = sys.gradient(seed)?;
    if grad.norm() <= search.step.singular_tol {
        return Err(Error::SingularPoint { grad_norm: grad.norm() });
    }
    let energy = sys.eval_h(seed)?;
    let scale = norm(seed.coords()).max(1.0);
    let ret = |x: &PhasePoint| poincare::section_return(sys, x, section, &search.step, search.return_budget);

    let mut x = seed.clone();
    if section.eval(x.coords()).abs() > 1e-12 * scale {
        x = ret(&x)?.y;
    }
    let basis = section_tangent(&section.normal);
    let k = basis.ncols();
    let d = sys.dim();
    let eps = 1e-7 * scale;

    let mut iterations = 0;
    loop {
        let r = ret(&x)?;
        let f = r.y.to_vector() - x.to_vector();
        let residual = f.norm();
        if residual <= search.tol {
            return finish(sys, r.y, r.tau, residual, iterations, search);
        }
        if iterations >= search.max_newton {
            return Err(Error::NoConvergence { iterations, residual });
        }
        iterations += 1;

        let mut jac = DMatrix::<f64>::zeros(d + 1, k);
        for c in 0..k {
            let dir = basis.column(c);
            let xp = PhasePoint::from_vector_unchecked(x.to_vector() + dir * eps);
            let xm = PhasePoint::from_vector_unchecked(x.to_vector() - dir * eps);
            let fp = ret(&xp)?.y.to_vector() - xp.to_vector();
            let fm = ret(&xm)?.y.to_vector() - xm.to_vector();
            let col = (fp - fm) / (2.0 * eps);
            jac.view_mut((0, c), (d, 1)).copy_from(&col);
            let g = sys.gradient(&x)?;
            jac[(d, c)] = g.dot(&dir);
        }
        let mut rhs = DVector::<f64>::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&(-&f));
        rhs[d] = -(sys.eval_h(&x)? - energy);

        let svd = linalg::svd(&jac)?;
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-9 * smax.max(1.0) {
            return Err(Error::SingularJacobian { min_sv: smin });
        }
        let delta = svd.solve(&rhs, 0.0).map_err(|_| Error::SingularJacobian { min_sv: smin })?;
        let mut step = basis.clone() * delta;
        // Backtrack while the residual grows.
        let mut accepted = None;
        for _ in 0..8 {
            let cand = PhasePoint::from_vector_unchecked(x.to_vector() + &step);
            if let Ok(rc) = ret(&cand) {
                let rc_res = (rc.y.to_vector() - cand.to_vector()).norm();
                if rc_res < residual || accepted.is_none() && step.norm() < 1e-14 * scale {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(c) => x = c,
            None => return Err(Error::NoConvergence { iterations, residual }),
        }
    }
}

fn finish(
    sys: &HamiltonianSystem,
    p: PhasePoint,
    period: f64,
    residual: f64,
    iterations: usize,
    search: &OrbitSearch,
) -> Result<PeriodicOrbit> {
    let frame = poincare::transversal_frame(sys, &p)?;
    let lp = poincare::linear_poincare_from(sys, &frame, period, &search.step, FrameRule::Same)?;
    let classification = classify_matrix(&lp.p, search.unit_band)?;
    Ok(PeriodicOrbit {
        p,
        period,
        monodromy: lp.p,
        omega: lp.omega_src,
        residual,
        unit_band: search.unit_band,
        classification,
        newton_iterations: iterations,
    })
}

// ---------------------------------------------------------------------------
// Spectral nudge

const SYMPLECTIC_TOL: f64 = 1e-10;

/// Moves a symplectic matrix by at most `delta` (operator norm) so that it
/// acquires an eigenvalue of modulus one. Supported inputs: `2×2` matrices
/// and matrices decoupled into `(q_i, p_i)` planes.
pub fn spectral_nudge(a: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let d = a.nrows();
    if d != a.ncols() || d == 0 || d % 2 != 0 {
        return Err(Error::InvalidParameter("spectral_nudge needs an even square matrix".into()));
    }
    let defect = linalg::symplectic_defect(a);
    if defect > SYMPLECTIC_TOL * linalg::max_abs(a).max(1.0) {
        return Err(Error::NotSymplectic { defect });
    }
    if d == 2 {
        return nudge2(a, delta);
    }
    let m = d / 2;
    let plane = |i: usize| [i, m + i];
    for r in 0..d {
        for c in 0..d {
            let same = (r % m) == (c % m);
            if !same && a[(r, c)] != 0.0 {
                return Err(Error::InvalidParameter(
                    "only matrices decoupled into (q_i, p_i) planes can be nudged".into(),
                ));
            }
        }
    }
    let block = |i: usize| {
        let idx = plane(i);
        DMatrix::from_fn(2, 2, |r, c| a[(idx[r], idx[c])])
    };
    let excess = |b: &DMatrix<f64>| b.trace().abs() - 2.0;
    if (0..m).any(|i| excess(&block(i)) <= 0.0) {
        return Ok(a.clone());
    }
    let target = (0..m).min_by(|&i, &j| excess(&block(i)).total_cmp(&excess(&block(j)))).unwrap_or(0);
    let nudged = nudge2(&block(target), delta)?;
    let mut out = a.clone();
    let idx = plane(target);
    for r in 0..2 {
        for c in 0..2 {
            out[(idx[r], idx[c])] = nudged[(r, c)];
        }
    }
    Ok(out)
}

/// Operator 2-norm of a 2×2 matrix in closed form.
fn norm2x2(e: &DMatrix<f64>) -> f64 {
    let (a, b, c, d) = (e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]);
    0.5 * (((a + d).powi(2) + (b - c).powi(2)).sqrt() + ((a - d).powi(2) + (b + c).powi(2)).sqrt())
}

/// Logarithm of `X ∈ SL(2)` with `tr X > −2`, on the branch through the identity.
fn log_sl2(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = 0.5 * x.trace();
    let shifted = x - DMatrix::<f64>::identity(2, 2) * t;
    let factor = if (t - 1.0).abs() < 1e-12 {
        1.0
    } else if t > 1.0 {
        let mu = t.acosh();
        mu / mu.sinh()
    } else {
        let th = t.clamp(-1.0, 1.0).acos();
        th / th.sin()
    };
    shifted * factor
}

/// Nearest parabolic matrix `σ (I + ρ u u⊥ᵀ)`, `σ = sign tr A`, in operator norm.
fn nearest_parabolic(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sigma = a.trace().signum();
    let id = DMatrix::<f64>::identity(2, 2);
    let nil = |phi: f64| {
        let (s, c) = phi.sin_cos();
        DMatrix::from_row_slice(2, 2, &[-c * s, c * c, -s * s, s * c])
    };
    let target = |phi: f64, rho: f64| (&id + nil(phi) * rho) * sigma;
    let dist = |phi: f64, rho: f64| norm2x2(&(a - target(phi, rho)));
    // The distance is convex in ρ: golden section from the Frobenius optimum.
    let best_rho = |phi: f64| {
        let m = nil(phi);
        let r0 = ((a * sigma - &id).component_mul(&m)).sum() / m.norm_squared();
        let span = 2.0 * r0.abs() + 1.0;
        golden(|r| dist(phi, r), r0 - span, r0 + span, 100)
    };
    let grid = 720;
    let mut best = (0.0, 0.0, f64::INFINITY);
    for k in 0..grid {
        let phi = std::f64::consts::PI * k as f64 / grid as f64;
        let rho = best_rho(phi);
        let d = dist(phi, rho);
        if d < best.2 {
            best = (phi, rho, d);
        }
    }
    let h = std::f64::consts::PI / grid as f64;
    let phi = golden(|p| dist(p, best_rho(p)), best.0 - h, best.0 + h, 80);
    let rho = best_rho(phi);
    let (phi, rho) = if dist(phi, rho) < best.2 { (phi, rho) } else { (best.0, best.1) };
    let out = target(phi, rho);
    let d = norm2x2(&(a - &out));
    (out, d)
}

fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// `A' = A exp(s J S)` along the one-parameter family through the nearest
/// parabolic matrix; `s` is bisected onto `|tr| ≤ 2`.
fn nudge2(a: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if a.trace().abs() <= 2.0 {
        return Ok(a.clone());
    }
    let (target, d) = nearest_parabolic(a);
    if d > delta {
        return Err(Error::NudgeOutOfReach { delta });
    }
    let inv = a.clone().try_inverse().ok_or(Error::NotSymplectic { defect: f64::INFINITY })?;
    // gen = J S with S symmetric, since log of an SL(2) element is traceless.
    let gen = log_sl2(&(inv * &target));
    let at = |s: f64| a * (&gen * s).exp();
    let inside = |b: &DMatrix<f64>| b.trace().abs() <= 2.0;
    // The family reaches |tr| = 2 at s = 1 up to rounding; allow a little overshoot.
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut hit = inside(&at(hi));
    for k in 1..=64 {
        if hit {
            break;
        }
        hi = 1.0 + k as f64 * 1e-9;
        hit = inside(&at(hi));
    }
    if !hit {
        return Err(Error::NudgeOutOfReach { delta });
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(&at(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let out = at(hi);
    if norm2x2(&(&out - a)) > delta {
        return Err(Error::NudgeOutOfReach { delta });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rational rotations

/// `p/q` with the least `q` such that `|2π p/q − θ| ≤ δ`.
pub fn rationalize_rotation(theta: f64, delta: f64) -> Result<(i64, i64)> {
    if !(delta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("need finite theta and delta > 0, got {theta}, {delta}")));
    }
    let lo = (theta - delta) / TAU;
    let hi = (theta + delta) / TAU;
    Ok(simplest_between(lo, hi))
}

/// Fraction with the smallest denominator in `[lo, hi]`.
fn simplest_between(lo: f64, hi: f64) -> (i64, i64) {
    if lo <= 0.0 && hi >= 0.0 {
        return (0, 1);
    }
    if hi < 0.0 {
        let (p, q) = simplest_between(-hi, -lo);
        return (-p, q);
    }
    simplest_positive(lo, hi, 0)
}

fn simplest_positive(lo: f64, hi: f64, depth: usize) -> (i64, i64) {
    let fl = lo.floor();
    if fl == lo || depth > 60 {
        return (fl as i64, 1);
    }
    if fl + 1.0 <= hi {
        return (fl as i64 + 1, 1);
    }
    // lo and hi share the integer part: recurse on reciprocals of the fractional parts.
    let (p, q) = simplest_positive(1.0 / (hi - fl), 1.0 / (lo - fl), depth + 1);
    (fl as i64 * p + q, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamsys::Builtin;
    use std::f64::consts::PI;

    fn pt(v: &[f64]) -> PhasePoint {
        PhasePoint::from_slice(v).unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn reciprocal_pair() {
        let q = eigen_quadruples(&diag(&[2.0, 0.5]), UNIT_BAND_EXACT).unwrap();
        assert_eq!(q.groups.len(), 1);
        assert_eq!(q.groups[0].len(), 2);
        assert!(q.pairing_defect < 1e-15);
    }

    #[test]
    fn unit_pair() {
        let q = eigen_quadruples(&linalg::rotation(1.0), UNIT_BAND_EXACT).unwrap();
        assert_eq!(q.groups.len(), 1);
        for s in &q.groups[0] {
            assert!((s.norm() - 1.0).abs() < 1e-14);
        }
        assert!((q.groups[0][0].im.abs() - 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn mixed_groups() {
        let a = linalg::from_pair_order(&linalg::block_diag(&[linalg::rotation(1.0), diag(&[3.0, 1.0 / 3.0])]));
        let q = eigen_quadruples(&a, UNIT_BAND_EXACT).unwrap();
        assert_eq!(q.groups.len(), 2);
        assert_eq!(q.len(), 4);
        assert!(q.pairing_defect < 1e-12);
        let real_group = q.groups.iter().find(|g| g.iter().all(|s| s.im == 0.0)).unwrap();
        let mut mods: Vec<f64> = real_group.iter().map(|s| s.re).collect();
        mods.sort_by(f64::total_cmp);
        assert!((mods[0] - 1.0 / 3.0).abs() < 1e-12 && (mods[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quartet_and_minus_one() {
        // Complex quartet: ρ e^{±iφ}, ρ^{-1} e^{±iφ}, built from a 4x4 symplectic exponential.
        let g = DMatrix::from_row_slice(4, 4, &[0.3, 1.0, 0.0, 0.0, -1.0, 0.3, 0.0, 0.0, 0.0, 0.0, -0.3, 1.0, 0.0, 0.0, -1.0, -0.3]);
        let a = g.exp();
        assert!(linalg::symplectic_defect(&a) < 1e-12);
        let q = eigen_quadruples(&a, UNIT_BAND_EXACT).unwrap();
        assert_eq!(q.groups.len(), 1);
        assert_eq!(q.groups[0].len(), 4);
        assert!(q.pairing_defect < 1e-12);

        let minus = -DMatrix::<f64>::identity(2, 2);
        let q = eigen_quadruples(&minus, UNIT_BAND_EXACT).unwrap();
        assert_eq!(q.groups, vec![vec![Complex64::new(-1.0, 0.0); 2]]);
        assert_eq!(classify_matrix(&minus, UNIT_BAND_EXACT).unwrap(), Classification::Degenerate);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_matrix(&linalg::rotation(1.0), UNIT_BAND_EXACT).unwrap(), Classification::Elliptic(1));
        assert_eq!(classify_matrix(&diag(&[2.0, 0.5]), UNIT_BAND_EXACT).unwrap(), Classification::Hyperbolic);
        let a = linalg::from_pair_order(&linalg::block_diag(&[
            linalg::rotation(1.0),
            diag(&[3.0, 1.0 / 3.0]),
        ]));
        assert_eq!(classify_matrix(&a, UNIT_BAND_EXACT).unwrap(), Classification::Elliptic(1));
        let repeated = linalg::from_pair_order(&linalg::block_diag(&[linalg::rotation(1.0), linalg::rotation(1.0)]));
        assert_eq!(classify_matrix(&repeated, UNIT_BAND_EXACT).unwrap(), Classification::Degenerate);
        assert_eq!(Classification::Elliptic(2).to_string(), "2-elliptic");
    }

    #[test]
    fn nudge_examples() {
        // Sp(2) with trace 2 + 1e-3.
        let lam = {
            let t: f64 = 2.0 + 1e-3;
            (t + (t * t - 4.0).sqrt()) / 2.0
        };
        let conj = |k: f64| {
            let shear = DMatrix::from_row_slice(2, 2, &[1.0, k, 0.0, 1.0]);
            &shear * diag(&[lam, 1.0 / lam]) * shear.clone().try_inverse().unwrap()
        };
        // Nearly normal: the trace window is about sqrt(1e-3) away in norm.
        assert_eq!(spectral_nudge(&conj(0.0), 1e-2), Err(Error::NudgeOutOfReach { delta: 1e-2 }));
        let a = conj(5.0);
        let b = spectral_nudge(&a, 1e-2).unwrap();
        assert!(b.trace().abs() <= 2.0);
        assert!((b.determinant() - 1.0).abs() < 1e-12);
        assert!(linalg::op_norm(&(&b - &a)).unwrap() <= 1e-2);
        assert!(linalg::symplectic_defect(&b) <= 1e-10);

        let ell = linalg::rotation(0.4);
        assert_eq!(spectral_nudge(&ell, 1e-3).unwrap(), ell);
        assert_eq!(spectral_nudge(&diag(&[3.0, 1.0 / 3.0]), 1e-3), Err(Error::NudgeOutOfReach { delta: 1e-3 }));
        assert!(matches!(spectral_nudge(&diag(&[3.0, 0.5]), 1.0), Err(Error::NotSymplectic { .. })));
    }

    #[test]
    fn nudge_block_diagonal() {
        let a = linalg::from_pair_order(&linalg::block_diag(&[diag(&[5.0, 0.2]), diag(&[1.0005, 1.0 / 1.0005])]));
        let b = spectral_nudge(&a, 1e-2).unwrap();
        assert!(linalg::op_norm(&(&b - &a)).unwrap() <= 1e-2);
        assert!(linalg::symplectic_defect(&b) <= 1e-10);
        let eig = linalg::eigenvalues(&b).unwrap();
        assert!(eig.iter().any(|s| (s.norm() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn rationalize_examples() {
        assert_eq!(rationalize_rotation(TAU / 3.0, 1e-6).unwrap(), (1, 3));
        assert_eq!(rationalize_rotation(0.0, 1e-3).unwrap(), (0, 1));
        assert_eq!(rationalize_rotation(-TAU / 3.0, 1e-6).unwrap(), (-1, 3));
        let (p, q) = rationalize_rotation(1.0, 1e-4).unwrap();
        assert!((TAU * p as f64 / q as f64 - 1.0).abs() <= 1e-4);
        let r = linalg::rotation(TAU * p as f64 / q as f64);
        let mut acc = DMatrix::<f64>::identity(2, 2);
        for _ in 0..q {
            acc = &r * acc;
        }
        assert!(linalg::max_abs(&(acc - DMatrix::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn harmonic_orbit() {
        let sys = Builtin::Harmonic.system();
        let sec = Section::coordinate(4, 2, 0.0, -1);
        let search = OrbitSearch { step: StepPolicy::with_step(1e-4), ..OrbitSearch::default() };
        let orb = find_periodic(&sys, &pt(&[1.0, 0.3, 0.0, 0.4]), &sec, &search).unwrap();
        assert!(orb.residual <= 1e-10);
        assert!((orb.period - TAU).abs() < 1e-7);
        assert_eq!(orb.newton_iterations, 0);
    }

    #[test]
    fn saddle_center_circle() {
        let sys = Builtin::SaddleCenter.system();
        // Circle q1 = p1 = 0 of radius 1 in the (q2, p2) plane; section p2 = 0.
        let sec = Section::coordinate(4, 3, 0.0, -1);
        let search = OrbitSearch { step: StepPolicy::with_step(1e-4), ..OrbitSearch::default() };
        let orb = find_periodic(&sys, &pt(&[0.0, 1.0, 0.0, 0.0]), &sec, &search).unwrap();
        assert!((orb.period - TAU).abs() < 1e-7);
        assert!(orb.residual <= 1e-10);
        assert_eq!(orb.classification, Classification::Hyperbolic);
        let eig = orb.eigenvalues().unwrap();
        let top = eig.iter().map(|s| s.norm()).fold(0.0, f64::max);
        assert!((top.ln() - TAU).abs() < 1e-5);
        let _ = PI;
    }
}
