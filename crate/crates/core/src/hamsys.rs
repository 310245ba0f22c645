//! Hamiltonian systems on `R^{2n}` with the standard symplectic form.
//!
//! A [`HamiltonianSystem`] wraps a [`Model`] (anything that can evaluate an
//! energy) and supplies the Hamiltonian field `X_H = J grad H`, falling back
//! to finite differences when the model has no closed-form derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance on `|grad H|` below which a point counts as singular.
pub const SINGULAR_TOL: f64 = 1e-8;

/// A point of phase space, ordered `(q1..qn, p1..pn)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhasePoint(Vec<f64>);

impl PhasePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(Error::InvalidPoint(format!(
                "phase points need an even, non-zero number of coordinates (got {})",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPoint(format!("coordinate {i} is not finite")));
        }
        Ok(Self(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(coords.to_vec())
    }

    pub(crate) fn from_vector_unchecked(v: DVector<f64>) -> Self {
        Self(v.as_slice().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        euclid(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for PhasePoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The energy function of a system, with optional closed-form derivatives.
///
/// `gradient` and `hessian` return `false` when no closed form is available;
/// the owning [`HamiltonianSystem`] then differentiates numerically.
pub trait Model: Send + Sync {
    fn energy(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn hessian(&self, _x: &[f64], _out: &mut DMatrix<f64>) -> bool {
        false
    }

    /// `H(q, p) = T(p) + V(q)`; enables the leapfrog integrator.
    fn is_separable(&self) -> bool {
        false
    }
}

#[derive(Clone)]
pub struct HamiltonianSystem {
    name: String,
    n: usize,
    model: Arc<dyn Model>,
}

impl fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .finish()
    }
}

impl HamiltonianSystem {
    /// Wraps a model with `n >= 2` degrees of freedom.
    pub fn new(name: impl Into<String>, n: usize, model: Arc<dyn Model>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSystem(format!(
                "n = {n}: one degree of freedom is only available through HamiltonianSystem::planar"
            )));
        }
        Ok(Self { name: name.into(), n, model })
    }

    /// One-degree-of-freedom system. Its transversal bundle is trivial, so
    /// only field-level operations are meaningful.
    pub fn planar(name: impl Into<String>, model: Arc<dyn Model>) -> Self {
        Self { name: name.into(), n: 1, model }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Degrees of freedom.
    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn is_planar(&self) -> bool {
        self.n == 1
    }

    pub fn is_separable(&self) -> bool {
        self.model.is_separable()
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn eval_h(&self, x: &PhasePoint) -> Result<f64> {
        self.check_dim(x.coords())?;
        Ok(self.model.energy(x.coords()))
    }

    pub(crate) fn energy_raw(&self, x: &[f64]) -> f64 {
        self.model.energy(x)
    }

    pub fn gradient(&self, x: &PhasePoint) -> Result<DVector<f64>> {
        self.check_dim(x.coords())?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x.coords(), &mut out)?;
        Ok(DVector::from_vec(out))
    }

    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.model.gradient(x, out) {
            fd_gradient(&*self.model, x, fd_step(x), out);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::GradientUnavailable);
        }
        Ok(())
    }

    /// Fourth-order central-difference gradient with an explicit step.
    pub fn fd_gradient(&self, x: &PhasePoint, step: f64) -> Result<DVector<f64>> {
        self.check_dim(x.coords())?;
        let mut out = vec![0.0; self.dim()];
        fd_gradient(&*self.model, x.coords(), step, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::GradientUnavailable);
        }
        Ok(DVector::from_vec(out))
    }

    pub fn hessian(&self, x: &PhasePoint) -> Result<DMatrix<f64>> {
        self.check_dim(x.coords())?;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        self.hessian_into(x.coords(), &mut out)?;
        Ok(out)
    }

    pub(crate) fn hessian_into(&self, x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        if !self.model.hessian(x, out) {
            self.fd_hessian(x, out)?;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::HessianUnavailable);
        }
        Ok(())
    }

    fn fd_hessian(&self, x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let d = x.len();
        let h = fd_step(x);
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for j in 0..d {
            xp[j] = x[j] + h;
            self.gradient_into(&xp, &mut gp).map_err(|_| Error::HessianUnavailable)?;
            xp[j] = x[j] - h;
            self.gradient_into(&xp, &mut gm).map_err(|_| Error::HessianUnavailable)?;
            xp[j] = x[j];
            for i in 0..d {
                out[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let sym = (&*out + out.transpose()) * 0.5;
        out.copy_from(&sym);
        Ok(())
    }

    /// `X_H(x) = J grad H(x)`.
    pub fn hamiltonian_field(&self, x: &PhasePoint) -> Result<DVector<f64>> {
        self.check_dim(x.coords())?;
        let mut out = vec![0.0; self.dim()];
        self.field_into(x.coords(), &mut out)?;
        Ok(DVector::from_vec(out))
    }

    pub(crate) fn field_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g)?;
        linalg::apply_j(&g, out);
        Ok(())
    }

    /// `true` iff `|grad H(x)| > tol`. Since `J` is an isometry this is the
    /// same test as `|X_H(x)| > tol`.
    pub fn is_regular(&self, x: &PhasePoint, tol: f64) -> bool {
        match self.gradient(x) {
            Ok(g) => g.norm() > tol,
            Err(_) => false,
        }
    }

    /// `max_x |X_H(R x) − R X_H(x)|` over the samples.
    pub fn symmetry_defect(&self, r: &DMatrix<f64>, samples: &[PhasePoint]) -> Result<f64> {
        if r.nrows() != self.dim() || r.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: r.nrows() });
        }
        let mut worst = 0.0_f64;
        for x in samples {
            let fx = self.hamiltonian_field(x)?;
            let rx = PhasePoint::from_vector_unchecked(r * x.to_vector());
            let frx = self.hamiltonian_field(&rx)?;
            worst = worst.max((frx - r * fx).norm());
        }
        Ok(worst)
    }

    /// Moves `y` onto the level `H = e` by Newton steps along the gradient.
    pub fn move_to_level(&self, y: &mut [f64], e: f64) -> Result<()> {
        self.check_dim(y)?;
        let mut g = vec![0.0; y.len()];
        for _ in 0..20 {
            let r = self.energy_raw(y) - e;
            if r.abs() <= 1e-14 * e.abs().max(1.0) {
                break;
            }
            self.gradient_into(y, &mut g)?;
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg == 0.0 {
                break;
            }
            for (yi, gi) in y.iter_mut().zip(&g) {
                *yi -= r / gg * gi;
            }
        }
        Ok(())
    }

    /// Builds the system described by a definition document.
    pub fn from_def(def: &SystemDef) -> Result<Self> {
        if let Some(b) = &def.builtin {
            let builtin: Builtin = b.parse()?;
            let sys = builtin.system();
            if def.n != 0 && def.n != sys.dof() {
                return Err(Error::InvalidSystem(format!(
                    "builtin {b} has n = {}, definition says {}",
                    sys.dof(),
                    def.n
                )));
            }
            return Ok(sys);
        }
        let terms = def
            .polynomial
            .as_ref()
            .ok_or_else(|| Error::InvalidSystem("definition has neither builtin nor polynomial".into()))?;
        let poly = Polynomial::new(def.n, terms.clone())?;
        Self::new(def.name.clone(), def.n, Arc::new(poly))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        Ok(name.parse::<Builtin>()?.system())
    }
}

/// Step used by the default finite-difference fallback.
pub fn fd_step(x: &[f64]) -> f64 {
    f64::EPSILON.cbrt() * norm(x).max(1.0)
}

fn fd_gradient(model: &dyn Model, x: &[f64], h: f64, out: &mut [f64]) {
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let mut eval = |offset: f64| {
            xs[i] = x[i] + offset;
            model.energy(&xs)
        };
        let f2 = eval(2.0 * h);
        let f1 = eval(h);
        let m1 = eval(-h);
        let m2 = eval(-2.0 * h);
        xs[i] = x[i];
        out[i] = (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h);
    }
}

// ---------------------------------------------------------------------------
// Builtin catalogue

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// `H(x, y) = x^3 − 3 x y^2`, one degree of freedom.
    Pedro,
    /// `H = ½ Σ (q_i² + p_i²)`, two degrees of freedom.
    Harmonic,
    /// `H = ½(p1² + p2²) + ½(q1² + q2²) + q1² q2 − q2³/3`.
    HenonHeiles,
    /// `H = q1 p1 + ½ (q2² + p2²)`.
    SaddleCenter,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [Builtin::Pedro, Builtin::Harmonic, Builtin::HenonHeiles, Builtin::SaddleCenter];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Pedro => "pedro",
            Builtin::Harmonic => "harmonic",
            Builtin::HenonHeiles => "henon-heiles",
            Builtin::SaddleCenter => "saddle-center",
        }
    }

    pub fn system(self) -> HamiltonianSystem {
        match self {
            Builtin::Pedro => HamiltonianSystem::planar(self.name(), Arc::new(Pedro)),
            Builtin::Harmonic => HamiltonianSystem { name: self.name().into(), n: 2, model: Arc::new(Harmonic { n: 2 }) },
            Builtin::HenonHeiles => HamiltonianSystem { name: self.name().into(), n: 2, model: Arc::new(HenonHeiles) },
            Builtin::SaddleCenter => HamiltonianSystem { name: self.name().into(), n: 2, model: Arc::new(SaddleCenter) },
        }
    }
}

impl std::str::FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("builtin:").unwrap_or(s);
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidSystem(format!("unknown builtin {s:?}")))
    }
}

pub struct Pedro;

impl Model for Pedro {
    fn energy(&self, x: &[f64]) -> f64 {
        let (q, p) = (x[0], x[1]);
        q * q * q - 3.0 * q * p * p
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (q, p) = (x[0], x[1]);
        out[0] = 3.0 * q * q - 3.0 * p * p;
        out[1] = -6.0 * q * p;
        true
    }

    fn hessian(&self, x: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (q, p) = (x[0], x[1]);
        out[(0, 0)] = 6.0 * q;
        out[(0, 1)] = -6.0 * p;
        out[(1, 0)] = -6.0 * p;
        out[(1, 1)] = -6.0 * q;
        true
    }
}

pub struct Harmonic {
    pub n: usize,
}

impl Model for Harmonic {
    fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(x);
        true
    }

    fn hessian(&self, x: &[f64], out: &mut DMatrix<f64>) -> bool {
        out.fill(0.0);
        out.fill_diagonal(1.0);
        debug_assert_eq!(out.nrows(), x.len());
        true
    }

    fn is_separable(&self) -> bool {
        true
    }
}

pub struct HenonHeiles;

impl Model for HenonHeiles {
    fn energy(&self, x: &[f64]) -> f64 {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        0.5 * (p1 * p1 + p2 * p2) + 0.5 * (q1 * q1 + q2 * q2) + q1 * q1 * q2 - q2 * q2 * q2 / 3.0
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        out[0] = q1 + 2.0 * q1 * q2;
        out[1] = q2 + q1 * q1 - q2 * q2;
        out[2] = p1;
        out[3] = p2;
        true
    }

    fn hessian(&self, x: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (q1, q2) = (x[0], x[1]);
        out.fill(0.0);
        out[(0, 0)] = 1.0 + 2.0 * q2;
        out[(0, 1)] = 2.0 * q1;
        out[(1, 0)] = 2.0 * q1;
        out[(1, 1)] = 1.0 - 2.0 * q2;
        out[(2, 2)] = 1.0;
        out[(3, 3)] = 1.0;
        true
    }

    fn is_separable(&self) -> bool {
        true
    }
}

pub struct SaddleCenter;

impl Model for SaddleCenter {
    fn energy(&self, x: &[f64]) -> f64 {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        q1 * p1 + 0.5 * (q2 * q2 + p2 * p2)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        out[0] = p1;
        out[1] = q2;
        out[2] = q1;
        out[3] = p2;
        true
    }

    fn hessian(&self, _x: &[f64], out: &mut DMatrix<f64>) -> bool {
        out.fill(0.0);
        out[(0, 2)] = 1.0;
        out[(2, 0)] = 1.0;
        out[(1, 1)] = 1.0;
        out[(3, 3)] = 1.0;
        true
    }
}

// ---------------------------------------------------------------------------
// Polynomial systems from definition documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// System definition document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDef {
    pub name: String,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub polynomial: Option<Vec<Term>>,
}

impl SystemDef {
    pub fn builtin(b: Builtin) -> Self {
        let sys = b.system();
        Self { name: b.name().into(), builtin: Some(b.name().into()), n: sys.dof(), polynomial: None }
    }
}

#[derive(Debug, Clone)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(n: usize, terms: Vec<Term>) -> Result<Self> {
        let dim = 2 * n;
        for (i, t) in terms.iter().enumerate() {
            if t.powers.len() != dim {
                return Err(Error::InvalidSystem(format!(
                    "term {i} has {} powers, expected {dim}",
                    t.powers.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidSystem(format!("term {i} has a non-finite coefficient")));
            }
        }
        Ok(Self { dim, terms })
    }

    fn monomial(x: &[f64], powers: &[u32], skip: &[(usize, u32)]) -> f64 {
        let mut v = 1.0;
        for (k, (&xk, &pk)) in x.iter().zip(powers).enumerate() {
            let mut e = pk;
            for &(idx, dec) in skip {
                if idx == k {
                    e -= dec;
                }
            }
            v *= xk.powi(e as i32);
        }
        v
    }
}

impl Model for Polynomial {
    fn energy(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coeff * Self::monomial(x, &t.powers, &[])).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        for t in &self.terms {
            for (i, &pi) in t.powers.iter().enumerate() {
                if pi > 0 {
                    out[i] += t.coeff * pi as f64 * Self::monomial(x, &t.powers, &[(i, 1)]);
                }
            }
        }
        true
    }

    fn hessian(&self, x: &[f64], out: &mut DMatrix<f64>) -> bool {
        out.fill(0.0);
        for t in &self.terms {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let (pi, pj) = (t.powers[i], t.powers[j]);
                    let c = if i == j {
                        if pi < 2 {
                            continue;
                        }
                        (pi * (pi - 1)) as f64 * Self::monomial(x, &t.powers, &[(i, 2)])
                    } else {
                        if pi == 0 || pj == 0 {
                            continue;
                        }
                        (pi * pj) as f64 * Self::monomial(x, &t.powers, &[(i, 1), (j, 1)])
                    };
                    out[(i, j)] += t.coeff * c;
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Suspension flows

/// State of a suspension flow: a base point and a roof coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspensionState<B> {
    pub base: B,
    pub r: f64,
}

type BaseMap<B> = Arc<dyn Fn(&B) -> B + Send + Sync>;
type Ceiling<B> = Arc<dyn Fn(&B) -> f64 + Send + Sync>;

/// Suspension of an invertible base map under a ceiling function bounded
/// below by `beta > 0`.
#[derive(Clone)]
pub struct SuspensionSystem<B> {
    map: BaseMap<B>,
    inverse: Option<BaseMap<B>>,
    ceiling: Ceiling<B>,
    beta: f64,
}

impl<B: Clone> SuspensionSystem<B> {
    pub fn new(map: BaseMap<B>, inverse: Option<BaseMap<B>>, ceiling: Ceiling<B>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("ceiling lower bound must be positive, got {beta}")));
        }
        Ok(Self { map, inverse, ceiling, beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ceiling(&self, x: &B) -> Result<f64> {
        let h = (self.ceiling)(x);
        if !(h >= self.beta) {
            return Err(Error::CeilingTooLow { value: h, beta: self.beta });
        }
        Ok(h)
    }

    pub fn base_map(&self, x: &B) -> B {
        (self.map)(x)
    }

    /// Flows `state` by time `s`, possibly negative.
    pub fn flow(&self, state: &SuspensionState<B>, s: f64) -> Result<SuspensionState<B>> {
        let h0 = self.ceiling(&state.base)?;
        if !(state.r >= 0.0 && state.r < h0) {
            return Err(Error::RoofOutOfRange { r: state.r, ceiling: h0 });
        }
        let mut x = state.base.clone();
        let mut r = state.r + s;
        if s >= 0.0 {
            let mut h = h0;
            while r >= h {
                r -= h;
                x = (self.map)(&x);
                h = self.ceiling(&x)?;
            }
        } else {
            let inv = self.inverse.as_ref().ok_or(Error::InverseUnavailable)?;
            while r < 0.0 {
                x = inv(&x);
                r += self.ceiling(&x)?;
            }
        }
        Ok(SuspensionState { base: x, r })
    }
}

/// Arnold's cat map `(x, y) ↦ (2x + y, x + y) mod 1` on the unit torus.
pub fn cat_map(p: &[f64; 2]) -> [f64; 2] {
    [(2.0 * p[0] + p[1]).rem_euclid(1.0), (p[0] + p[1]).rem_euclid(1.0)]
}

pub fn cat_map_inverse(p: &[f64; 2]) -> [f64; 2] {
    [(p[0] - p[1]).rem_euclid(1.0), (-p[0] + 2.0 * p[1]).rem_euclid(1.0)]
}

impl SuspensionSystem<[f64; 2]> {
    /// Cat-map suspension with constant ceiling `height`.
    pub fn cat_map_constant(height: f64) -> Result<Self> {
        Self::new(Arc::new(cat_map), Some(Arc::new(cat_map_inverse)), Arc::new(move |_| height), height)
    }
}

/// Outcome of following integer-time images of the slab `Σ × (0, ½)`.
#[derive(Debug, Clone, Serialize)]
pub struct SlabWitness {
    pub images_checked: usize,
    /// Images that landed in `Σ × (½, 1)`.
    pub violations: usize,
}

impl SlabWitness {
    pub fn holds(&self) -> bool {
        self.images_checked > 0 && self.violations == 0
    }
}

/// Follows states from the lower slab through integer times `1..=max_time`
/// and counts landings in the upper slab `Σ × (½, 1)`.
pub fn slab_witness<B: Clone>(
    susp: &SuspensionSystem<B>,
    states: &[SuspensionState<B>],
    max_time: usize,
) -> Result<SlabWitness> {
    let mut checked = 0;
    let mut violations = 0;
    for st in states {
        if !(st.r > 0.0 && st.r < 0.5) {
            return Err(Error::InvalidParameter(format!("state r = {} not in the lower slab", st.r)));
        }
        for k in 1..=max_time {
            let img = susp.flow(st, k as f64)?;
            checked += 1;
            if img.r > 0.5 && img.r < 1.0 {
                violations += 1;
            }
        }
    }
    Ok(SlabWitness { images_checked: checked, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pt(v: &[f64]) -> PhasePoint {
        PhasePoint::from_slice(v).unwrap()
    }

    #[test]
    fn pedro_values() {
        let sys = Builtin::Pedro.system();
        assert_eq!(sys.eval_h(&pt(&[1.0, 0.0])).unwrap(), 1.0);
        let f = sys.hamiltonian_field(&pt(&[1.0, 0.0])).unwrap();
        assert_eq!(f.as_slice(), &[0.0, -3.0]);
        let f0 = sys.hamiltonian_field(&pt(&[0.0, 0.0])).unwrap();
        assert_eq!(f0.as_slice(), &[0.0, 0.0]);
        assert!(!sys.is_regular(&pt(&[0.0, 0.0]), 1e-8));
        assert!(sys.is_regular(&pt(&[1.0, 0.0]), 1e-8));
    }

    #[test]
    fn harmonic_values() {
        let sys = Builtin::Harmonic.system();
        assert_eq!(sys.eval_h(&pt(&[0.0; 4])).unwrap(), 0.0);
        assert!(!sys.is_regular(&pt(&[0.0; 4]), 1e-8));
        // (q1, q2, p1, p2) = (1, 1, 0, 0): each mode at (q, p) = (1, 0)
        let f = sys.hamiltonian_field(&pt(&[1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.0, -1.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let sys = Builtin::Harmonic.system();
        assert_eq!(
            sys.eval_h(&pt(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { expected: 4, got: 2 })
        );
    }

    #[test]
    fn rejects_bad_points() {
        assert!(PhasePoint::new(vec![1.0, 2.0, 3.0]).is_err());
        assert!(PhasePoint::new(vec![1.0, f64::NAN]).is_err());
        assert!(PhasePoint::new(vec![]).is_err());
    }

    #[test]
    fn one_dof_needs_planar_constructor() {
        assert!(HamiltonianSystem::new("x", 1, Arc::new(Pedro)).is_err());
        assert!(Builtin::Pedro.system().is_planar());
    }

    #[test]
    fn identity_symmetry_defect_is_zero() {
        let sys = Builtin::HenonHeiles.system();
        let samples = vec![pt(&[0.1, -0.2, 0.3, 0.05]), pt(&[0.0, 0.3, -0.1, 0.2])];
        let d = sys.symmetry_defect(&DMatrix::identity(4, 4), &samples).unwrap();
        assert_eq!(d, 0.0);
    }

    struct Blowup;
    impl Model for Blowup {
        fn energy(&self, x: &[f64]) -> f64 {
            1.0 / x[0]
        }
    }

    #[test]
    fn non_evaluable_gradient() {
        let sys = HamiltonianSystem::new("blowup", 2, Arc::new(Blowup)).unwrap();
        assert_eq!(
            sys.hamiltonian_field(&pt(&[0.0, 0.0, 0.0, 0.0])),
            Err(Error::GradientUnavailable)
        );
    }

    #[test]
    fn fd_fallback_matches_closed_form() {
        struct EnergyOnly;
        impl Model for EnergyOnly {
            fn energy(&self, x: &[f64]) -> f64 {
                HenonHeiles.energy(x)
            }
        }
        let sys = HamiltonianSystem::new("hh-fd", 2, Arc::new(EnergyOnly)).unwrap();
        let hh = Builtin::HenonHeiles.system();
        let x = pt(&[0.1, -0.2, 0.3, 0.05]);
        let g = sys.gradient(&x).unwrap();
        assert!((g - hh.gradient(&x).unwrap()).amax() < 1e-9);
        let h = sys.hessian(&x).unwrap();
        assert!((h - hh.hessian(&x).unwrap()).amax() < 1e-5);
    }

    #[test]
    fn polynomial_matches_builtin() {
        // Hénon–Heiles written as a polynomial document.
        let def: SystemDef = serde_json::from_str(
            r#"{"name": "hh", "builtin": null, "n": 2, "polynomial": [
                {"coeff": 0.5, "powers": [2,0,0,0]}, {"coeff": 0.5, "powers": [0,2,0,0]},
                {"coeff": 0.5, "powers": [0,0,2,0]}, {"coeff": 0.5, "powers": [0,0,0,2]},
                {"coeff": 1.0, "powers": [2,1,0,0]}, {"coeff": -0.3333333333333333, "powers": [0,3,0,0]}
            ]}"#,
        )
        .unwrap();
        let poly = HamiltonianSystem::from_def(&def).unwrap();
        let hh = Builtin::HenonHeiles.system();
        let x = pt(&[0.2, -0.1, 0.3, 0.4]);
        assert!((poly.eval_h(&x).unwrap() - hh.eval_h(&x).unwrap()).abs() < 1e-15);
        assert!((poly.gradient(&x).unwrap() - hh.gradient(&x).unwrap()).amax() < 1e-15);
        assert!((poly.hessian(&x).unwrap() - hh.hessian(&x).unwrap()).amax() < 1e-15);
    }

    #[test]
    fn builtin_definition_round_trip() {
        let def = SystemDef::builtin(Builtin::SaddleCenter);
        let text = serde_json::to_string(&def).unwrap();
        let sys = HamiltonianSystem::from_def(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(sys.name(), "saddle-center");
        assert!(HamiltonianSystem::builtin("builtin:nope").is_err());
    }

    #[test]
    fn suspension_basic() {
        let susp = SuspensionSystem::cat_map_constant(1.0).unwrap();
        let st = SuspensionState { base: [0.3, 0.7], r: 0.0 };
        let out = susp.flow(&st, 3.25).unwrap();
        let f3 = cat_map(&cat_map(&cat_map(&st.base)));
        assert_eq!(out.base, f3);
        assert!((out.r - 0.25).abs() < 1e-15);
        assert_eq!(susp.flow(&st, 0.0).unwrap(), st);
        let back = susp.flow(&out, -3.25).unwrap();
        assert!((back.base[0] - st.base[0]).abs() < 1e-12);
        assert!(back.r.abs() < 1e-12);
    }

    #[test]
    fn suspension_errors() {
        let susp = SuspensionSystem::new(
            Arc::new(cat_map),
            None,
            Arc::new(|_: &[f64; 2]| 1.0),
            1.0,
        )
        .unwrap();
        let st = SuspensionState { base: [0.1, 0.2], r: 0.5 };
        assert_eq!(susp.flow(&st, -1.0), Err(Error::InverseUnavailable));
        let bad = SuspensionState { base: [0.1, 0.2], r: 1.0 };
        assert!(matches!(susp.flow(&bad, 0.1), Err(Error::RoofOutOfRange { .. })));
        let low = SuspensionSystem::new(Arc::new(cat_map), None, Arc::new(|_: &[f64; 2]| 0.1), 0.5).unwrap();
        assert!(matches!(low.flow(&SuspensionState { base: [0.0, 0.0], r: 0.0 }, 1.0), Err(Error::CeilingTooLow { .. })));
    }

    #[test]
    fn variable_ceiling_formula() {
        // h(x, y) = 1 + x/2 >= 1: accumulate the displayed sum by hand.
        let ceiling = |p: &[f64; 2]| 1.0 + 0.5 * p[0];
        let susp = SuspensionSystem::new(Arc::new(cat_map), Some(Arc::new(cat_map_inverse)), Arc::new(ceiling), 1.0).unwrap();
        let st = SuspensionState { base: [0.4, 0.9], r: 0.2 };
        let s = 4.0;
        let out = susp.flow(&st, s).unwrap();
        let mut x = st.base;
        let mut acc = 0.0;
        let mut n = 0;
        while acc + ceiling(&x) <= st.r + s {
            acc += ceiling(&x);
            x = cat_map(&x);
            n += 1;
        }
        assert!(n > 0);
        assert_eq!(out.base, x);
        assert!((out.r - (st.r + s - acc)).abs() < 1e-12);
        assert!(out.r >= 0.0 && out.r < ceiling(&out.base));
    }

    #[test]
    fn harmonic_rotation_equivariance() {
        let sys = Builtin::Harmonic.system();
        let theta = 0.83;
        let r = linalg::from_pair_order(&linalg::block_diag(&[linalg::rotation(theta), linalg::rotation(theta)]));
        let samples: Vec<_> = (0..10)
            .map(|k| {
                let a = k as f64 * 0.37;
                pt(&[a.sin(), (2.0 * a).cos(), 0.5 * a.cos(), -a.sin() * 0.3])
            })
            .collect();
        assert!(sys.symmetry_defect(&r, &samples).unwrap() <= 1e-12);
        let _ = PI;
    }
}
