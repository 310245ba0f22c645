//! Transversal frames, the linear Poincaré flow and section returns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, StepPolicy, Stepper};
use crate::hamsys::{norm, HamiltonianSystem, PhasePoint, SINGULAR_TOL};
use crate::linalg;

const DEGENERATE_FORM: f64 = 1e-12;
// Candidate columns whose residual after projection falls below this are skipped.
const INDEPENDENCE_TOL: f64 = 1e-6;

/// Orthonormal basis of `N_x`, the orthogonal complement of
/// `span{X_H(x), grad H(x)}`. Columns: `2n − 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransversalFrame {
    pub x: PhasePoint,
    pub basis: DMatrix<f64>,
}

impl TransversalFrame {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Max of the three orthogonality residuals.
    pub fn orthogonality_defect(&self, sys: &HamiltonianSystem) -> Result<f64> {
        let k = self.rank();
        let gram = self.basis.transpose() * &self.basis - DMatrix::<f64>::identity(k, k);
        let g = sys.gradient(&self.x)?;
        let f = sys.hamiltonian_field(&self.x)?;
        let bg = self.basis.transpose() * g;
        let bf = self.basis.transpose() * f;
        Ok(linalg::max_abs(&gram).max(bg.amax()).max(bf.amax()))
    }
}

fn unit_field_and_gradient(sys: &HamiltonianSystem, x: &PhasePoint, tol: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = sys.gradient(x)?;
    let gn = g.norm();
    if gn <= tol {
        return Err(Error::SingularPoint { grad_norm: gn });
    }
    let g = g / gn;
    let mut f = vec![0.0; g.len()];
    linalg::apply_j(g.as_slice(), &mut f);
    Ok((DVector::from_vec(f), g))
}

/// Canonical frame: the standard basis minus its two vectors with the largest
/// projection onto `span{X_H, grad H}` (ties to the lower index), projected
/// and Gram–Schmidt orthonormalized in index order.
pub fn transversal_frame(sys: &HamiltonianSystem, x: &PhasePoint) -> Result<TransversalFrame> {
    transversal_frame_tol(sys, x, SINGULAR_TOL)
}

pub fn transversal_frame_tol(sys: &HamiltonianSystem, x: &PhasePoint, tol: f64) -> Result<TransversalFrame> {
    sys.check_dim(x.coords())?;
    let (f, g) = unit_field_and_gradient(sys, x, tol)?;
    let d = sys.dim();
    let mut weight: Vec<(usize, f64)> = (0..d).map(|k| (k, f[k] * f[k] + g[k] * g[k])).collect();
    weight.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let skipped = [weight[0].0, weight[1].0];
    let mut order: Vec<usize> = (0..d).filter(|k| !skipped.contains(k)).collect();
    let mut tail = skipped.to_vec();
    tail.sort_unstable();
    order.extend(tail);

    let mut cols: Vec<DVector<f64>> = vec![f, g];
    for k in order {
        if cols.len() == d {
            break;
        }
        let mut v = DVector::<f64>::zeros(d);
        v[k] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
        }
        let nv = v.norm();
        if nv > INDEPENDENCE_TOL {
            cols.push(v / nv);
        }
    }
    let basis = if cols.len() > 2 { DMatrix::from_columns(&cols[2..]) } else { DMatrix::zeros(d, 0) };
    Ok(TransversalFrame { x: x.clone(), basis })
}

/// Frame at `x` spanned by `Π_x W`, orthonormalized column by column.
/// Keeps orientation continuous along orbits.
pub fn transport_frame(sys: &HamiltonianSystem, x: &PhasePoint, w: &DMatrix<f64>) -> Result<TransversalFrame> {
    let (f, g) = unit_field_and_gradient(sys, x, SINGULAR_TOL)?;
    let mut pw = w.clone();
    for mut col in pw.column_iter_mut() {
        let a = f.dot(&col);
        let b = g.dot(&col);
        col.axpy(-a, &f, 1.0);
        col.axpy(-b, &g, 1.0);
    }
    let basis = linalg::orthonormalize(&pw).map_err(|_| Error::DegenerateForm { det: 0.0 })?;
    Ok(TransversalFrame { x: x.clone(), basis })
}

/// `Ω_ij = b_iᵀ J b_j`.
pub fn induced_form(frame: &TransversalFrame) -> Result<DMatrix<f64>> {
    let b = &frame.basis;
    if b.ncols() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let n = b.nrows() / 2;
    let mut jb = DMatrix::zeros(b.nrows(), b.ncols());
    for (c, col) in b.column_iter().enumerate() {
        let mut out = vec![0.0; b.nrows()];
        linalg::apply_j(col.as_slice(), &mut out);
        jb.column_mut(c).copy_from_slice(&out);
    }
    debug_assert_eq!(jb.nrows(), 2 * n);
    let omega = b.transpose() * jb;
    // Exact skew-symmetry.
    let omega = (&omega - omega.transpose()) * 0.5;
    let det = linalg::det(&omega);
    if det.abs() < DEGENERATE_FORM {
        return Err(Error::DegenerateForm { det });
    }
    Ok(omega)
}

/// Matrix of the transversal linear Poincaré flow in orthonormal frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPoincareMap {
    pub p: DMatrix<f64>,
    pub frame_src: TransversalFrame,
    pub frame_dst: TransversalFrame,
    pub t: f64,
    pub omega_src: DMatrix<f64>,
    pub omega_dst: DMatrix<f64>,
    /// Full tangent map `DX^t` the projection was taken from.
    pub tangent: DMatrix<f64>,
}

impl LinearPoincareMap {
    /// `max |Pᵀ Ω_dst P − Ω_src|`.
    pub fn symplectic_defect(&self) -> f64 {
        linalg::form_defect(&self.p, &self.omega_src, &self.omega_dst)
    }

    pub fn det(&self) -> f64 {
        linalg::det(&self.p)
    }
}

/// `P = B_dstᵀ · DX^t · B_src` in canonical frames at both ends.
pub fn linear_poincare(sys: &HamiltonianSystem, x: &PhasePoint, t: f64, policy: &StepPolicy) -> Result<LinearPoincareMap> {
    let src = transversal_frame(sys, x)?;
    linear_poincare_from(sys, &src, t, policy, FrameRule::Canonical)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRule {
    /// Canonical frame at the destination.
    Canonical,
    /// Destination frame obtained by pushing the source frame forward.
    Transported,
    /// Destination frame equals the source frame; requires `X^t(x) ≈ x`.
    Same,
}

pub fn linear_poincare_from(
    sys: &HamiltonianSystem,
    src: &TransversalFrame,
    t: f64,
    policy: &StepPolicy,
    rule: FrameRule,
) -> Result<LinearPoincareMap> {
    let tf = flow::tangent_flow(sys, &src.x, t, policy)?;
    poincare_from_tangent(sys, src, tf.x_t, tf.m, t, rule)
}

pub(crate) fn poincare_from_tangent(
    sys: &HamiltonianSystem,
    src: &TransversalFrame,
    x_t: PhasePoint,
    m: DMatrix<f64>,
    t: f64,
    rule: FrameRule,
) -> Result<LinearPoincareMap> {
    let singular = |e: Error| match e {
        Error::SingularPoint { .. } => Error::SingularOnOrbit { t },
        other => other,
    };
    let dst = match rule {
        FrameRule::Canonical => transversal_frame(sys, &x_t).map_err(singular)?,
        FrameRule::Transported => transport_frame(sys, &x_t, &(&m * &src.basis)).map_err(singular)?,
        FrameRule::Same => {
            unit_field_and_gradient(sys, &x_t, SINGULAR_TOL).map_err(singular)?;
            TransversalFrame { x: x_t, basis: src.basis.clone() }
        }
    };
    let p = dst.basis.transpose() * &m * &src.basis;
    let omega_src = induced_form(src)?;
    let omega_dst = induced_form(&dst)?;
    Ok(LinearPoincareMap { p, frame_src: src.clone(), frame_dst: dst, t, omega_src, omega_dst, tangent: m })
}

/// Affine section `s(x) = normal · x − offset`, crossed in `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub normal: Vec<f64>,
    pub offset: f64,
    /// `+1`: crossings with `s` increasing; `-1`: decreasing.
    pub direction: i8,
}

impl Section {
    /// Section `x_k = value` crossed upward/downward.
    pub fn coordinate(dim: usize, k: usize, value: f64, direction: i8) -> Self {
        let mut normal = vec![0.0; dim];
        normal[k] = 1.0;
        Self { normal, offset: value, direction }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }

    fn signed(&self, x: &[f64]) -> f64 {
        self.direction as f64 * self.eval(x)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.normal.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.normal.len() });
        }
        if self.direction != 1 && self.direction != -1 {
            return Err(Error::InvalidParameter(format!("section direction must be ±1, got {}", self.direction)));
        }
        if norm(&self.normal) == 0.0 {
            return Err(Error::InvalidParameter("section normal is zero".into()));
        }
        Ok(())
    }

    /// `normal · X_H(x)` relative to `|normal| |X_H(x)|`.
    pub fn transversality(&self, sys: &HamiltonianSystem, x: &[f64]) -> Result<f64> {
        let mut f = vec![0.0; x.len()];
        sys.field_into(x, &mut f)?;
        let dot: f64 = self.normal.iter().zip(&f).map(|(a, b)| a * b).sum();
        Ok(dot / (norm(&self.normal) * norm(&f)).max(f64::MIN_POSITIVE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionReturn {
    pub y: PhasePoint,
    pub tau: f64,
    /// Sign changes of `s` seen up to and including the accepted one.
    pub crossings: usize,
}

const TRANSVERSALITY_TOL: f64 = 1e-9;

/// First positive-time crossing of `section` in its direction, within `budget`.
pub fn section_return(
    sys: &HamiltonianSystem,
    x: &PhasePoint,
    section: &Section,
    policy: &StepPolicy,
    budget: f64,
) -> Result<SectionReturn> {
    sys.check_dim(x.coords())?;
    section.validate(sys.dim())?;
    policy.validate(sys)?;
    if section.transversality(sys, x.coords())?.abs() < TRANSVERSALITY_TOL {
        return Err(Error::TangentialCrossing { t: 0.0 });
    }
    let scale = norm(&section.normal) * norm(x.coords()).max(1.0);
    let mut stepper = Stepper::new(sys, policy.method);
    let h = policy.step;
    let mut cur = x.coords().to_vec();
    let mut s_prev = section.signed(&cur);
    if s_prev.abs() <= 1e-12 * scale {
        s_prev = 0.0;
    }
    let mut crossings = 0;
    let steps = (budget / h).ceil() as usize;
    for k in 0..steps {
        let t0 = k as f64 * h;
        let mut next = cur.clone();
        stepper.step(&mut next, h, None, t0)?;
        if next.iter().any(|v| !v.is_finite()) || policy.bound.is_some_and(|b| norm(&next) > b) {
            return Err(Error::OrbitEscaped { t: t0 + h });
        }
        let s_next = section.signed(&next);
        if (s_prev < 0.0) != (s_next < 0.0) && !(s_prev == 0.0 && s_next >= 0.0) {
            crossings += 1;
        }
        if s_prev < 0.0 && s_next >= 0.0 {
            let (tau, y) = refine_crossing(&mut stepper, section, &cur, h, t0, scale)?;
            if section.transversality(sys, &y)?.abs() < TRANSVERSALITY_TOL {
                return Err(Error::TangentialCrossing { t: t0 + tau });
            }
            return Ok(SectionReturn {
                y: PhasePoint::from_slice(&y).map_err(|_| Error::OrbitEscaped { t: t0 + tau })?,
                tau: t0 + tau,
                crossings,
            });
        }
        cur = next;
        s_prev = s_next;
    }
    Err(Error::NoReturn { budget })
}

/// Root of `τ ↦ s(step_τ(x))` on `(0, h]`: bisection, then secant polish.
fn refine_crossing(
    stepper: &mut Stepper<'_>,
    section: &Section,
    x: &[f64],
    h: f64,
    t0: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut eval = |tau: f64| -> Result<(f64, Vec<f64>)> {
        let mut y = x.to_vec();
        stepper.step(&mut y, tau, None, t0)?;
        Ok((section.signed(&y), y))
    };
    let (mut lo, mut hi) = (0.0, h);
    let mut s_lo = section.signed(x);
    let (mut s_hi, _) = eval(hi)?;
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        let (sm, _) = eval(mid)?;
        if sm < 0.0 {
            lo = mid;
            s_lo = sm;
        } else {
            hi = mid;
            s_hi = sm;
        }
    }
    let mut tau = if s_hi == s_lo { hi } else { lo - s_lo * (hi - lo) / (s_hi - s_lo) };
    let (mut s, mut y) = eval(tau)?;
    for _ in 0..20 {
        if s.abs() <= 1e-15 * scale {
            break;
        }
        if s < 0.0 {
            lo = tau;
            s_lo = s;
        } else {
            hi = tau;
            s_hi = s;
        }
        if s_hi == s_lo {
            break;
        }
        let next = lo - s_lo * (hi - lo) / (s_hi - s_lo);
        if next == tau {
            break;
        }
        tau = next;
        (s, y) = eval(tau)?;
    }
    Ok((tau, y))
}
