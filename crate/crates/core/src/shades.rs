//! Pseudo-orbits, chains, reparametrizations and deterministic searches for
//! shadowing, weak shadowing, expansiveness and weak specification.
//!
//! A failed search means "not found within budget", never "absent".

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, StepPolicy};
use crate::hamsys::{euclid, HamiltonianSystem, PhasePoint, Polynomial, Term};
use crate::poincare;

/// Relative slack on return times of constructed chains.
pub const RETURN_SLACK: f64 = 1e-3;
pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 20;

/// Planar saddle `H = q p`.
pub fn linear_saddle_model() -> HamiltonianSystem {
    let poly = Polynomial::new(1, vec![Term { coeff: 1.0, powers: vec![1, 1] }]).expect("valid polynomial");
    HamiltonianSystem::planar("linear-saddle", Arc::new(poly))
}

// ---------------------------------------------------------------------------
// Pseudo-orbits and chains

/// Finite window `i_min..=i_max` of a `(δ, T)`-pseudo-orbit. Entry `i` carries
/// its point `x_i` and flight time `t_i`; the last flight has no jump after it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoOrbit {
    pub start_index: i64,
    pub points: Vec<PhasePoint>,
    pub times: Vec<f64>,
    pub delta: f64,
    #[serde(rename = "T")]
    pub min_time: f64,
    /// `jump_errors[k] = d(X^{t_i}(x_i), x_{i+1})` with `i = start_index + k`.
    pub jump_errors: Vec<f64>,
}

impl PseudoOrbit {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn end_index(&self) -> i64 {
        self.start_index + self.points.len() as i64 - 1
    }

    pub fn point(&self, i: i64) -> Option<&PhasePoint> {
        usize::try_from(i - self.start_index).ok().and_then(|k| self.points.get(k))
    }

    /// `S(i)` for `start_index ≤ i ≤ end_index + 1`, anchored at `S(0) = 0`.
    pub fn knot(&self, i: i64) -> f64 {
        let k0 = -self.start_index;
        let k = i - self.start_index;
        let sum = |a: i64, b: i64| self.times[a as usize..b as usize].iter().sum::<f64>();
        if k >= k0 {
            sum(k0, k)
        } else {
            -sum(k, k0)
        }
    }

    /// `[S(i_min), S(i_max + 1))`.
    pub fn window(&self) -> (f64, f64) {
        (self.knot(self.start_index), self.knot(self.end_index() + 1))
    }

    /// Index of the segment containing `t`, i.e. `S(i) ≤ t < S(i+1)`.
    pub fn segment_at(&self, t: f64) -> Result<i64> {
        let (start, end) = self.window();
        if !(t >= start && t < end) {
            return Err(Error::OutOfWindow { t, start, end });
        }
        let mut i = self.start_index;
        let mut s = start;
        for (k, &dt) in self.times.iter().enumerate() {
            if t < s + dt || k + 1 == self.times.len() {
                return Ok(i);
            }
            s += dt;
            i += 1;
        }
        Ok(i)
    }

    pub fn to_file(&self) -> PseudoOrbitFile {
        PseudoOrbitFile {
            delta: self.delta,
            min_time: self.min_time,
            start_index: self.start_index,
            entries: self
                .points
                .iter()
                .zip(&self.times)
                .map(|(x, &t)| PseudoOrbitEntry { x: x.coords().to_vec(), t })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOrbitEntry {
    pub x: Vec<f64>,
    pub t: f64,
}

/// Pseudo-orbit document `{"delta", "T", "entries": [{"x", "t"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOrbitFile {
    pub delta: f64,
    #[serde(rename = "T")]
    pub min_time: f64,
    #[serde(default)]
    pub start_index: i64,
    pub entries: Vec<PseudoOrbitEntry>,
}

impl PseudoOrbitFile {
    pub fn build(&self, sys: &HamiltonianSystem, policy: &StepPolicy) -> Result<PseudoOrbit> {
        let points = self.entries.iter().map(|e| PhasePoint::from_slice(&e.x)).collect::<Result<Vec<_>>>()?;
        let times: Vec<f64> = self.entries.iter().map(|e| e.t).collect();
        build_pseudo_orbit(sys, &points, &times, self.delta, self.min_time, self.start_index, policy)
    }
}

/// Validates every flight time and jump and stores the jump errors.
pub fn build_pseudo_orbit(
    sys: &HamiltonianSystem,
    points: &[PhasePoint],
    times: &[f64],
    delta: f64,
    min_time: f64,
    start_index: i64,
    policy: &StepPolicy,
) -> Result<PseudoOrbit> {
    if points.is_empty() || points.len() != times.len() {
        return Err(Error::InvalidParameter("need one flight time per point".into()));
    }
    if !(delta > 0.0 && min_time > 0.0) {
        return Err(Error::InvalidParameter("delta and T must be positive".into()));
    }
    for (k, &t) in times.iter().enumerate() {
        if !(t >= min_time) {
            return Err(Error::TimeTooShort { index: start_index + k as i64, time: t, min_time });
        }
    }
    for p in points {
        sys.check_dim(p.coords())?;
    }
    let jump_errors = points
        .par_iter()
        .zip(times.par_iter())
        .take(points.len() - 1)
        .map(|(x, &t)| flow::flow_at(sys, x, t, policy))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .zip(&points[1..])
        .map(|(image, next)| image.distance(next))
        .collect::<Vec<_>>();
    for (k, &e) in jump_errors.iter().enumerate() {
        if !(e < delta) {
            return Err(Error::JumpTooLarge { index: start_index + k as i64, error: e, delta });
        }
    }
    Ok(PseudoOrbit {
        start_index,
        points: points.to_vec(),
        times: times.to_vec(),
        delta,
        min_time,
        jump_errors,
    })
}

/// `x_0 ⋆ t = X^{t − S(i)}(x_i)` for `S(i) ≤ t < S(i+1)`.
pub fn chain_eval(sys: &HamiltonianSystem, po: &PseudoOrbit, t: f64, policy: &StepPolicy) -> Result<PhasePoint> {
    let i = po.segment_at(t)?;
    let x = po.point(i).expect("segment index inside window");
    flow::flow_at(sys, x, t - po.knot(i), policy)
}

/// Three-phase chain: `q` for `i ≤ 0`, straight drift to `y` in `k` equal
/// jumps, then `y` for `i > k`; every flight time equals `period`.
pub fn breakdown_pseudo_orbit(
    sys: &HamiltonianSystem,
    q: &PhasePoint,
    period: f64,
    y: &PhasePoint,
    delta: f64,
    k: usize,
    tail: usize,
    policy: &StepPolicy,
) -> Result<PseudoOrbit> {
    sys.check_dim(q.coords())?;
    sys.check_dim(y.coords())?;
    if k == 0 || !(period > 0.0) {
        return Err(Error::InvalidParameter("k and period must be positive".into()));
    }
    let distance = q.distance(y);
    if distance > 0.0 && k as f64 * delta <= distance {
        return Err(Error::InsufficientSteps { steps: k, delta, distance });
    }
    let lerp = |s: f64| {
        PhasePoint::new(q.coords().iter().zip(y.coords()).map(|(a, b)| a + s * (b - a)).collect())
    };
    let mut points = vec![q.clone(); tail + 1];
    for i in 1..=k {
        points.push(lerp(i as f64 / k as f64)?);
    }
    points.extend(std::iter::repeat(y.clone()).take(tail));
    let times = vec![period; points.len()];
    build_pseudo_orbit(sys, &points, &times, delta, period * (1.0 - RETURN_SLACK), -(tail as i64), policy)
}

/// Chain hugging the axes of the planar saddle `q p`: it descends the stable
/// axis from `(0, 1)`, hops across the corner, then climbs the unstable axis to
/// `q ≈ 1`. Each point carries a deterministic offset of `0.1 δ`; all flights
/// last 1.
pub fn saddle_axis_pseudo_orbit(delta: f64, policy: &StepPolicy) -> Result<PseudoOrbit> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter("delta must lie in (0, 1)".into()));
    }
    let sys = linear_saddle_model();
    let corner = 0.3 * delta;
    let m = (1.0 / corner).ln().ceil() as i64;
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let points = (-m..=m)
        .enumerate()
        .map(|(idx, i)| {
            let axis = if i < 0 { [0.0, (-(i + m) as f64).exp()] } else { [corner * (i as f64).exp(), 0.0] };
            let angle = std::f64::consts::TAU * (idx as f64 * golden).fract();
            PhasePoint::from_slice(&[axis[0] + 0.1 * delta * angle.cos(), axis[1] + 0.1 * delta * angle.sin()])
        })
        .collect::<Result<Vec<_>>>()?;
    let times = vec![1.0; points.len()];
    build_pseudo_orbit(&sys, &points, &times, delta, 1.0, -m, policy)
}

// ---------------------------------------------------------------------------
// Reparametrizations

/// Piecewise-linear increasing map through `(0, 0)`, extended linearly past
/// the outermost breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reparametrization {
    pub breakpoints: Vec<(f64, f64)>,
    pub epsilon_class: f64,
}

impl Reparametrization {
    pub fn new(breakpoints: Vec<(f64, f64)>, epsilon_class: f64) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(Error::InvalidParameter("breakpoints must be strictly increasing in both coordinates".into()));
        }
        if !breakpoints.iter().any(|&(t, a)| t == 0.0 && a == 0.0) {
            return Err(Error::InvalidParameter("reparametrization must fix 0".into()));
        }
        Ok(Self { breakpoints, epsilon_class })
    }

    pub fn identity(start: f64, end: f64, epsilon_class: f64) -> Self {
        let mut bp = vec![(start.min(0.0), start.min(0.0)), (0.0, 0.0), (end.max(0.0), end.max(0.0))];
        bp.dedup_by(|a, b| a.0 == b.0);
        if bp.len() < 2 {
            bp = vec![(0.0, 0.0), (1.0, 1.0)];
        }
        Self { breakpoints: bp, epsilon_class }
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.breakpoints.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        let k = bp.windows(2).position(|w| t < w[1].0).unwrap_or(bp.len() - 2);
        let (t0, a0) = bp[k];
        let (t1, a1) = bp[k + 1];
        a0 + (t - t0) * (a1 - a0) / (t1 - t0)
    }

    /// Every slope in `(1 − ε, 1 + ε)`, hence `|α(t)/t − 1| < ε` for all `t ≠ 0`.
    pub fn in_class(&self, eps: f64) -> bool {
        self.slopes().iter().all(|s| (s - 1.0).abs() < eps)
    }

    /// `max |α(t)/t − 1|` over the non-zero breakpoints.
    pub fn max_ratio_defect(&self) -> f64 {
        self.breakpoints
            .iter()
            .filter(|(t, _)| *t != 0.0)
            .map(|(t, a)| (a / t - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Dense orbits

/// Orbit stored at every integrator step in both time directions, evaluated
/// by cubic Hermite interpolation with the vector field as slopes.
struct DenseOrbit {
    dim: usize,
    fwd: Track,
    bwd: Track,
}

struct Track {
    step: f64,
    states: Vec<f64>,
    fields: Vec<f64>,
}

impl Track {
    fn build(sys: &HamiltonianSystem, z: &[f64], t: f64, policy: &StepPolicy) -> Result<Self> {
        let d = z.len();
        let (_, step) = policy.grid(t);
        let mut states = z.to_vec();
        let mut x = z.to_vec();
        if t != 0.0 {
            flow::advance(sys, &mut x, t, policy, None, |_, xk| states.extend_from_slice(xk))?;
        }
        let mut fields = vec![0.0; states.len()];
        for (s, f) in states.chunks(d).zip(fields.chunks_mut(d)) {
            sys.field_into(s, f)?;
        }
        Ok(Self { step, states, fields })
    }

    fn len(&self, d: usize) -> usize {
        self.states.len() / d
    }

    fn at(&self, s: f64, d: usize, out: &mut [f64]) -> bool {
        let n = self.len(d);
        if n == 1 {
            if s == 0.0 {
                out.copy_from_slice(&self.states[..d]);
                return true;
            }
            return false;
        }
        let pos = s / self.step;
        if !(pos >= -1e-9 && pos <= (n - 1) as f64 + 1e-9) {
            return false;
        }
        let k = (pos.floor() as usize).min(n - 2);
        let u = (pos - k as f64).clamp(0.0, 1.0);
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let (y0, y1) = (&self.states[k * d..(k + 1) * d], &self.states[(k + 1) * d..(k + 2) * d]);
        let (f0, f1) = (&self.fields[k * d..(k + 1) * d], &self.fields[(k + 1) * d..(k + 2) * d]);
        for i in 0..d {
            out[i] = h00 * y0[i] + h10 * self.step * f0[i] + h01 * y1[i] + h11 * self.step * f1[i];
        }
        true
    }
}

impl DenseOrbit {
    fn build(sys: &HamiltonianSystem, z: &[f64], lo: f64, hi: f64, policy: &StepPolicy) -> Result<Self> {
        Ok(Self {
            dim: z.len(),
            fwd: Track::build(sys, z, hi.max(0.0), policy)?,
            bwd: Track::build(sys, z, lo.min(0.0), policy)?,
        })
    }

    fn at(&self, s: f64, out: &mut [f64]) -> bool {
        if s >= 0.0 {
            self.fwd.at(s, self.dim, out)
        } else {
            self.bwd.at(s, self.dim, out)
        }
    }

    /// All stored states, both directions.
    fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.fwd.states.chunks(self.dim).chain(self.bwd.states.chunks(self.dim).skip(1))
    }
}

// ---------------------------------------------------------------------------
// Deterministic compass search

/// Descent runs on a smooth surrogate, success is judged on the sup.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    /// `(mean d^p)^{1/p}`: every sample pulls, unlike the sup.
    surrogate: f64,
    sup: f64,
}

const SURROGATE_POWER: i32 = 8;

impl Score {
    const FAILED: Score = Score { surrogate: f64::INFINITY, sup: f64::INFINITY };

    fn of(distances: impl Iterator<Item = f64>) -> Score {
        let (mut sum, mut sup, mut n) = (0.0, 0.0_f64, 0usize);
        for d in distances {
            if !d.is_finite() {
                return Score::FAILED;
            }
            sum += d.powi(SURROGATE_POWER);
            sup = sup.max(d);
            n += 1;
        }
        if n == 0 {
            return Score { surrogate: 0.0, sup: 0.0 };
        }
        Score { surrogate: (sum / n as f64).powf(1.0 / SURROGATE_POWER as f64), sup }
    }
}

struct CompassOutcome {
    /// Point with the smallest sup seen.
    point: Vec<f64>,
    value: f64,
    evals: usize,
    exhausted: bool,
}

/// Poll-all compass search on the surrogate. Coordinates `< heavy`
/// invalidate the prepared state; the others reuse it. Ties go to the
/// lowest candidate index.
#[allow(clippy::too_many_arguments)]
fn compass<P, Prep, Eval>(
    starts: &[Vec<f64>],
    mut steps: Vec<f64>,
    min_steps: &[f64],
    heavy: usize,
    target: f64,
    budget: usize,
    prepare: Prep,
    eval: Eval,
) -> CompassOutcome
where
    P: Send + Sync,
    Prep: Fn(&[f64]) -> Option<P> + Sync,
    Eval: Fn(&[f64], &P) -> Score + Sync,
{
    let score = |v: &[f64], p: &Option<P>| p.as_ref().map_or(Score::FAILED, |p| eval(v, p));
    let take = starts.len().min(budget.max(1));
    let mut scored: Vec<(Score, Option<P>)> = starts[..take]
        .par_iter()
        .map(|v| {
            let p = prepare(v);
            (score(v, &p), p)
        })
        .collect();
    let mut evals = take;
    let lowest = |it: &mut dyn Iterator<Item = (usize, f64)>, bound: f64| {
        it.fold((usize::MAX, bound), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
    };
    let (mut best_point, mut best_sup) = {
        let (i, v) = lowest(&mut scored.iter().map(|(s, _)| s.sup).enumerate(), f64::INFINITY);
        (starts[i.min(take - 1)].clone(), v)
    };
    let (cur_idx, _) = lowest(&mut scored.iter().map(|(s, _)| s.surrogate).enumerate(), f64::INFINITY);
    let cur_idx = cur_idx.min(take - 1);
    let (mut current, mut prep) = scored.swap_remove(cur_idx);
    let mut point = starts[cur_idx].clone();
    let mut exhausted = take < starts.len();
    while !exhausted && !(best_sup < target) {
        if steps.iter().zip(min_steps).all(|(s, m)| s < m) {
            break;
        }
        let mut moves = Vec::with_capacity(2 * steps.len());
        for (i, &s) in steps.iter().enumerate() {
            if s >= min_steps[i] {
                for sign in [1.0, -1.0] {
                    let mut v = point.clone();
                    v[i] += sign * s;
                    moves.push((i, v));
                }
            }
        }
        if evals + moves.len() > budget {
            exhausted = true;
            break;
        }
        evals += moves.len();
        let here = &prep;
        let mut results: Vec<(Score, Option<Option<P>>)> = moves
            .par_iter()
            .map(|(i, v)| {
                if *i < heavy {
                    let p = prepare(v);
                    (score(v, &p), Some(p))
                } else {
                    (score(v, here), None)
                }
            })
            .collect();
        let (si, sv) = lowest(&mut results.iter().map(|(s, _)| s.sup).enumerate(), best_sup);
        if si != usize::MAX {
            best_sup = sv;
            best_point = moves[si].1.clone();
        }
        let (bi, _) = lowest(&mut results.iter().map(|(s, _)| s.surrogate).enumerate(), current.surrogate);
        if bi == usize::MAX {
            for s in steps.iter_mut() {
                *s *= 0.5;
            }
            continue;
        }
        let (sc, new_prep) = results.swap_remove(bi);
        current = sc;
        point = moves[bi].1.clone();
        if let Some(p) = new_prep {
            prep = p;
        }
    }
    CompassOutcome { point: best_point, value: best_sup, evals, exhausted }
}

/// Offsets `0` and `±r·e_k` for every coordinate.
fn star(dim: usize, r: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim]];
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; dim];
            v[k] = sign * r;
            out.push(v);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Shadowing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Maximal number of objective evaluations.
    pub budget: usize,
    pub samples_per_segment: usize,
    /// Reparametrization class; defaults to the shadowing distance.
    pub rep_eps: Option<f64>,
    pub step: StepPolicy,
    /// Search stops once every step falls below this fraction of its start.
    pub min_step_ratio: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 2000,
            samples_per_segment: DEFAULT_SAMPLES_PER_SEGMENT,
            rep_eps: None,
            step: StepPolicy::with_step(1e-2),
            min_step_ratio: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchOutcome {
    Found,
    BudgetExhausted,
    /// Steps shrank below resolution before reaching the target.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShadowReport {
    pub success: bool,
    pub outcome: SearchOutcome,
    pub z: Option<PhasePoint>,
    pub alpha: Option<Reparametrization>,
    /// Best sup-distance reached.
    pub achieved_eps: f64,
    pub eps: f64,
    pub rep_eps: Option<f64>,
    pub budget: usize,
    pub budget_spent: usize,
    pub samples_per_segment: usize,
    pub note: String,
}

const SEARCH_NOTE: &str = "failure means not found within budget, not proved absent";

fn outcome_of(o: &CompassOutcome, target: f64) -> SearchOutcome {
    if o.value < target {
        SearchOutcome::Found
    } else if o.exhausted {
        SearchOutcome::BudgetExhausted
    } else {
        SearchOutcome::Stalled
    }
}

/// Chain sample times `S(i) + t_i·m/samples` and the chain points there.
fn chain_samples(
    sys: &HamiltonianSystem,
    po: &PseudoOrbit,
    samples: usize,
    policy: &StepPolicy,
) -> Result<Vec<(usize, f64, Vec<f64>)>> {
    let per_segment: Vec<Result<Vec<(usize, f64, Vec<f64>)>>> = (0..po.len())
        .into_par_iter()
        .map(|k| {
            let i = po.start_index + k as i64;
            let s0 = po.knot(i);
            let dt = po.times[k] / samples as f64;
            let mut x = po.points[k].coords().to_vec();
            let mut out = vec![(k, s0, x.clone())];
            for m in 1..samples {
                flow::advance(sys, &mut x, dt, policy, None, |_, _| {})?;
                out.push((k, s0 + m as f64 * dt, x.clone()));
            }
            Ok(out)
        })
        .collect();
    Ok(per_segment.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// Knot values `α(S(i))` from per-segment slopes with `α(S(0)) = 0`.
fn knots_from_slopes(po: &PseudoOrbit, slopes: &[f64]) -> Vec<f64> {
    let n = po.len();
    let k0 = (-po.start_index) as usize;
    let mut a = vec![0.0; n + 1];
    for k in k0..n {
        a[k + 1] = a[k] + slopes[k] * po.times[k];
    }
    for k in (0..k0).rev() {
        a[k] = a[k + 1] - slopes[k] * po.times[k];
    }
    a
}

fn check_shadow_inputs(po: &PseudoOrbit, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    if po.start_index > 0 || po.end_index() < 0 {
        return Err(Error::InvalidParameter("pseudo-orbit window must contain index 0".into()));
    }
    Ok(())
}

struct ShadowProblem<'a> {
    sys: &'a HamiltonianSystem,
    po: &'a PseudoOrbit,
    chain: Vec<(usize, f64, Vec<f64>)>,
    d: usize,
    x0: Vec<f64>,
    /// Largest slope deviation, strictly inside the open class.
    rho: f64,
    rep: f64,
    samples: usize,
    step: StepPolicy,
}

impl<'a> ShadowProblem<'a> {
    fn new(sys: &'a HamiltonianSystem, po: &'a PseudoOrbit, rep: f64, opts: &SearchOptions) -> Result<Self> {
        if !(rep > 0.0 && rep < 1.0) {
            return Err(Error::InvalidParameter("reparametrization class must lie in (0, 1)".into()));
        }
        let samples = opts.samples_per_segment.max(1);
        Ok(Self {
            sys,
            po,
            chain: chain_samples(sys, po, samples, &opts.step)?,
            d: sys.dim(),
            x0: po.point(0).ok_or(Error::InvalidParameter("window must contain index 0".into()))?.coords().to_vec(),
            rho: rep * (1.0 - 1e-6),
            rep,
            samples,
            step: opts.step.clone(),
        })
    }

    fn slopes(&self, dev: &[f64]) -> Vec<f64> {
        dev.iter().map(|s| 1.0 + s.clamp(-self.rho, self.rho)).collect()
    }

    fn z(&self, offset: &[f64]) -> Vec<f64> {
        self.x0.iter().zip(offset).map(|(a, b)| a + b).collect()
    }

    fn orbit(&self, offset: &[f64]) -> Result<DenseOrbit> {
        let (lo, hi) = self.po.window();
        DenseOrbit::build(self.sys, &self.z(offset), lo * (1.0 + self.rep) - 1.0, hi * (1.0 + self.rep) + 1.0, &self.step)
    }

    fn score(&self, orbit: &DenseOrbit, dev: &[f64]) -> Score {
        let slopes = self.slopes(dev);
        let knots = knots_from_slopes(self.po, &slopes);
        let mut buf = vec![0.0; self.d];
        Score::of(self.chain.iter().map(|(k, t, c)| {
            let s = knots[*k] + slopes[*k] * (t - self.po.knot(self.po.start_index + *k as i64));
            if orbit.at(s, &mut buf) { euclid(&buf, c) } else { f64::INFINITY }
        }))
    }
}

/// Sup-distance between the chain and `X^{α(t)}(z)` on the sample grid, with
/// `α` given by per-segment slopes.
pub fn shadow_distance(
    sys: &HamiltonianSystem,
    po: &PseudoOrbit,
    z: &PhasePoint,
    slopes: &[f64],
    opts: &SearchOptions,
) -> Result<f64> {
    if slopes.len() != po.len() {
        return Err(Error::InvalidParameter("one slope per segment".into()));
    }
    let rep = slopes.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max) * 2.0 + 1e-3;
    let prob = ShadowProblem::new(sys, po, rep.min(0.99), opts)?;
    let offset: Vec<f64> = z.coords().iter().zip(&prob.x0).map(|(a, b)| a - b).collect();
    let dev: Vec<f64> = slopes.iter().map(|s| s - 1.0).collect();
    Ok(prob.score(&prob.orbit(&offset)?, &dev).sup)
}

/// Searches `z` near `x_0` and per-segment slopes in `[1 − ε', 1 + ε']` minimizing
/// `sup_t d(X^{α(t)}(z), x_0 ⋆ t)` on the sample grid. Success iff the sup is `< ε`.
pub fn shadow_search(sys: &HamiltonianSystem, po: &PseudoOrbit, eps: f64, opts: &SearchOptions) -> Result<ShadowReport> {
    check_shadow_inputs(po, eps)?;
    let rep = opts.rep_eps.unwrap_or(eps);
    let prob = ShadowProblem::new(sys, po, rep, opts)?;
    let (d, m, rho, samples) = (prob.d, po.len(), prob.rho, prob.samples);
    let slopes_of = |v: &[f64]| prob.slopes(&v[d..]);
    let z_of = |v: &[f64]| prob.z(&v[..d]);
    let prepare = |v: &[f64]| prob.orbit(&v[..d]).ok();
    let objective = |v: &[f64], orbit: &DenseOrbit| prob.score(orbit, &v[d..]);
    // Stage one holds the clock fixed and moves only the base point.
    let identity = vec![0.0; m];
    let z_steps = vec![eps / 4.0; d];
    let z_min: Vec<f64> = z_steps.iter().map(|s| s * opts.min_step_ratio).collect();
    let first = compass(
        &star(d, eps / 2.0),
        z_steps,
        &z_min,
        d,
        eps,
        opts.budget / 2,
        |v: &[f64]| prob.orbit(v).ok(),
        |_: &[f64], orbit: &DenseOrbit| prob.score(orbit, &identity),
    );
    let out = if first.value < eps {
        let mut point = first.point.clone();
        point.extend_from_slice(&identity);
        CompassOutcome { point, ..first }
    } else {
        let mut starts = Vec::new();
        let mut seed = first.point.clone();
        seed.extend_from_slice(&identity);
        starts.push(seed);
        for zo in star(d, eps / 2.0) {
            for ds in [0.0, rho / 2.0, -rho / 2.0] {
                let mut v = zo.clone();
                v.extend(std::iter::repeat(ds).take(m));
                starts.push(v);
            }
        }
        let mut steps = vec![eps / 4.0; d];
        steps.extend(std::iter::repeat(rho / 4.0).take(m));
        let min_steps: Vec<f64> = steps.iter().map(|s| s * opts.min_step_ratio).collect();
        let second = compass(&starts, steps, &min_steps, d, eps, opts.budget - first.evals, prepare, objective);
        let keep_first = first.value <= second.value;
        let mut point = first.point.clone();
        point.extend_from_slice(&identity);
        CompassOutcome {
            point: if keep_first { point } else { second.point.clone() },
            value: first.value.min(second.value),
            evals: first.evals + second.evals,
            exhausted: second.exhausted,
        }
    };
    let outcome = outcome_of(&out, eps);
    let success = outcome == SearchOutcome::Found;
    let (z, alpha) = if success {
        let slopes = slopes_of(&out.point);
        let knots = knots_from_slopes(po, &slopes);
        let bp = (0..=m).map(|k| (po.knot(po.start_index + k as i64), knots[k])).collect();
        (Some(PhasePoint::new(z_of(&out.point))?), Some(Reparametrization::new(bp, rep)?))
    } else {
        (None, None)
    };
    Ok(ShadowReport {
        success,
        outcome,
        z,
        alpha,
        achieved_eps: out.value,
        eps,
        rep_eps: Some(rep),
        budget: opts.budget,
        budget_spent: out.evals,
        samples_per_segment: samples,
        note: SEARCH_NOTE.into(),
    })
}

/// Searches `z` near `x_0` whose sampled orbit passes within `ε` of every
/// pseudo-orbit point, ignoring time.
pub fn weak_shadow_search(
    sys: &HamiltonianSystem,
    po: &PseudoOrbit,
    eps: f64,
    opts: &SearchOptions,
) -> Result<ShadowReport> {
    check_shadow_inputs(po, eps)?;
    let d = sys.dim();
    let x0 = po.point(0).expect("window contains 0").coords().to_vec();
    let (lo, hi) = po.window();
    let pad = po.times.iter().copied().fold(0.0, f64::max);
    let z_of = |v: &[f64]| -> Vec<f64> { x0.iter().zip(v).map(|(a, b)| a + b).collect() };
    let prepare = |v: &[f64]| DenseOrbit::build(sys, &z_of(v), lo - pad, hi + pad, &opts.step).ok();
    let objective = |_: &[f64], orbit: &DenseOrbit| -> Score {
        Score::of(po.points.iter().map(|p| orbit.states().map(|s| euclid(s, p.coords())).fold(f64::INFINITY, f64::min)))
    };
    let steps = vec![eps / 4.0; d];
    let min_steps: Vec<f64> = steps.iter().map(|s| s * opts.min_step_ratio).collect();
    let out = compass(&star(d, eps / 2.0), steps, &min_steps, d, eps, opts.budget, prepare, objective);
    let outcome = outcome_of(&out, eps);
    let success = outcome == SearchOutcome::Found;
    Ok(ShadowReport {
        success,
        outcome,
        z: if success { Some(PhasePoint::new(z_of(&out.point))?) } else { None },
        alpha: None,
        achieved_eps: out.value,
        eps,
        rep_eps: None,
        budget: opts.budget,
        budget_spent: out.evals,
        samples_per_segment: 0,
        note: SEARCH_NOTE.into(),
    })
}

/// Orbit arc `P(t) = X^{t − a}(point)` for `t ∈ [a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitArc {
    pub point: PhasePoint,
    pub start: f64,
    pub end: f64,
}

/// Searches `x` with `d(X^t(x), P(t)) < ε` on both arcs. The arcs must be
/// at least `K` apart in time.
pub fn weak_spec_check(
    sys: &HamiltonianSystem,
    arc1: &OrbitArc,
    arc2: &OrbitArc,
    spacing: f64,
    eps: f64,
    opts: &SearchOptions,
) -> Result<ShadowReport> {
    if !(eps > 0.0) || !(arc1.end >= arc1.start) || !(arc2.end >= arc2.start) {
        return Err(Error::InvalidParameter("eps must be positive and arcs non-empty".into()));
    }
    if arc2.start < arc1.end + spacing {
        return Err(Error::InvalidParameter(format!(
            "second arc starts at {} before {} + K = {}",
            arc2.start,
            arc1.end,
            arc1.end + spacing
        )));
    }
    let samples = opts.samples_per_segment.max(1);
    let mut targets: Vec<(f64, Vec<f64>)> = Vec::new();
    for arc in [arc1, arc2] {
        let len = arc.end - arc.start;
        let dt = len / samples as f64;
        let mut x = arc.point.coords().to_vec();
        targets.push((arc.start - arc1.start, x.clone()));
        for m in 1..=samples {
            if dt > 0.0 {
                flow::advance(sys, &mut x, dt, &opts.step, None, |_, _| {})?;
                targets.push((arc.start - arc1.start + m as f64 * dt, x.clone()));
            }
        }
    }
    let d = sys.dim();
    let horizon = arc2.end - arc1.start;
    let w_of = |v: &[f64]| -> Vec<f64> { arc1.point.coords().iter().zip(v).map(|(a, b)| a + b).collect() };
    let prepare = |v: &[f64]| DenseOrbit::build(sys, &w_of(v), 0.0, horizon, &opts.step).ok();
    let objective = |_: &[f64], orbit: &DenseOrbit| -> Score {
        let mut buf = vec![0.0; d];
        Score::of(targets.iter().map(|(s, p)| if orbit.at(*s, &mut buf) { euclid(&buf, p) } else { f64::INFINITY }))
    };
    let steps = vec![eps / 4.0; d];
    let min_steps: Vec<f64> = steps.iter().map(|s| s * opts.min_step_ratio).collect();
    let out = compass(&star(d, eps / 2.0), steps, &min_steps, d, eps, opts.budget, prepare, objective);
    let outcome = outcome_of(&out, eps);
    let success = outcome == SearchOutcome::Found;
    let z = if success {
        let w = PhasePoint::new(w_of(&out.point))?;
        Some(flow::flow_at(sys, &w, -arc1.start, &opts.step)?)
    } else {
        None
    };
    Ok(ShadowReport {
        success,
        outcome,
        z,
        alpha: None,
        achieved_eps: out.value,
        eps,
        rep_eps: None,
        budget: opts.budget,
        budget_spent: out.evals,
        samples_per_segment: samples,
        note: SEARCH_NOTE.into(),
    })
}

// ---------------------------------------------------------------------------
// Expansiveness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Offset of the probed points as a fraction of `δ`.
    pub offset_ratio: f64,
    /// Time resolution of the alignment.
    pub dt: f64,
    pub step: StepPolicy,
    /// Largest slope the alignment may use on the probed orbit.
    pub max_speedup: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { offset_ratio: 0.1, dt: 5e-3, step: StepPolicy::with_step(1e-3), max_speedup: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSample {
    pub y: PhasePoint,
    /// First `|t|` at which every monotone alignment exceeds `δ`.
    pub exit_time: Option<f64>,
    /// Best aligned sup-distance over the whole window.
    pub aligned_sup: f64,
    /// `min_{|s| ≤ ε} d(y, X^s(x))`.
    pub orbit_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ProbeVerdict {
    /// Every probed point separated; `exit_time` is the latest first exit.
    Separated { exit_time: f64 },
    NonExpansiveWitness { y: PhasePoint, aligned_sup: f64, orbit_gap: f64 },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansivenessReport {
    #[serde(flatten)]
    pub verdict: ProbeVerdict,
    pub delta: f64,
    pub window: f64,
    pub eps: f64,
    pub offset: f64,
    pub samples: Vec<ProbeSample>,
}

/// Samples of `X^{k·dt}(x)` for `k = 0..=n` with `dt` signed.
fn orbit_samples(sys: &HamiltonianSystem, x: &[f64], dt: f64, n: usize, policy: &StepPolicy) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut y = x.to_vec();
    out.push(y.clone());
    for _ in 0..n {
        flow::advance(sys, &mut y, dt, policy, None, |_, _| {})?;
        out.push(y.clone());
    }
    Ok(out)
}

/// Discrete Fréchet alignment from `(0, 0)`. Returns, for every prefix of
/// `a`, the best bottleneck over monotone couplings with any prefix of `b`.
fn prefix_bottlenecks(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut prev = vec![f64::INFINITY; b.len()];
    let mut cur = vec![f64::INFINITY; b.len()];
    let mut best = Vec::with_capacity(a.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let reach = if i == 0 && j == 0 {
                0.0
            } else {
                let mut r = f64::INFINITY;
                if i > 0 {
                    r = r.min(prev[j]);
                    if j > 0 {
                        r = r.min(prev[j - 1]);
                    }
                }
                if j > 0 {
                    r = r.min(cur[j - 1]);
                }
                r
            };
            cur[j] = reach.max(euclid(ai, bj));
        }
        best.push(cur.iter().copied().fold(f64::INFINITY, f64::min));
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Probes points `y` at distance `offset_ratio·δ` from `x` along each
/// transversal frame direction, on the energy level of `x`.
pub fn expansiveness_probe(
    sys: &HamiltonianSystem,
    x: &PhasePoint,
    delta: f64,
    window: f64,
    eps: f64,
    opts: &ProbeOptions,
) -> Result<ExpansivenessReport> {
    if !(delta > 0.0 && window > 0.0 && eps > 0.0 && opts.dt > 0.0) {
        return Err(Error::InvalidParameter("delta, window, eps and dt must be positive".into()));
    }
    let offset = opts.offset_ratio * delta;
    let report = |verdict, samples| ExpansivenessReport { verdict, delta, window, eps, offset, samples };
    let frame = poincare::transversal_frame(sys, x)?;
    if frame.rank() == 0 {
        return Ok(report(
            ProbeVerdict::Inconclusive { reason: "no transversal directions on the energy level".into() },
            vec![],
        ));
    }
    let e = sys.energy_raw(x.coords());
    let n = (window / opts.dt).ceil() as usize;
    let ny = (window * opts.max_speedup / opts.dt).ceil() as usize;
    let x_fwd = orbit_samples(sys, x.coords(), opts.dt, n, &opts.step)?;
    let x_bwd = orbit_samples(sys, x.coords(), -opts.dt, n, &opts.step)?;
    let gap_steps = (eps / opts.dt).ceil() as usize;
    let gap_dt = eps / gap_steps.max(1) as f64;
    let near_x: Vec<Vec<f64>> = orbit_samples(sys, x.coords(), gap_dt, gap_steps, &opts.step)?
        .into_iter()
        .chain(orbit_samples(sys, x.coords(), -gap_dt, gap_steps, &opts.step)?)
        .collect();
    let mut dirs = Vec::new();
    for c in 0..frame.rank() {
        for sign in [1.0, -1.0] {
            dirs.push(frame.basis.column(c) * sign);
        }
    }
    let samples = dirs
        .par_iter()
        .map(|v| -> Result<ProbeSample> {
            let mut y: Vec<f64> = x.coords().iter().zip(v.iter()).map(|(a, b)| a + offset * b).collect();
            sys.move_to_level(&mut y, e)?;
            let y_fwd = orbit_samples(sys, &y, opts.dt, ny, &opts.step)?;
            let y_bwd = orbit_samples(sys, &y, -opts.dt, ny, &opts.step)?;
            let fwd = prefix_bottlenecks(&x_fwd, &y_fwd);
            let bwd = prefix_bottlenecks(&x_bwd, &y_bwd);
            let exit = |b: &[f64]| b.iter().position(|&v| v > delta).map(|i| i as f64 * opts.dt);
            let exit_time = match (exit(&fwd), exit(&bwd)) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            let aligned_sup = fwd.last().copied().unwrap_or(0.0).max(bwd.last().copied().unwrap_or(0.0));
            let orbit_gap = near_x.iter().map(|p| euclid(p, &y)).fold(f64::INFINITY, f64::min);
            Ok(ProbeSample { y: PhasePoint::new(y)?, exit_time, aligned_sup, orbit_gap })
        })
        .collect::<Result<Vec<_>>>()?;
    // Off-orbit means farther from the local orbit piece than its sampling resolution.
    let resolution = opts.dt * sys.hamiltonian_field(x)?.norm();
    let witness = samples.iter().find(|s| s.exit_time.is_none() && s.orbit_gap > resolution.max(1e-3 * offset));
    let verdict = if let Some(w) = witness {
        ProbeVerdict::NonExpansiveWitness { y: w.y.clone(), aligned_sup: w.aligned_sup, orbit_gap: w.orbit_gap }
    } else if samples.iter().all(|s| s.exit_time.is_some()) {
        let t = samples.iter().filter_map(|s| s.exit_time).fold(0.0, f64::max);
        ProbeVerdict::Separated { exit_time: t }
    } else {
        ProbeVerdict::Inconclusive { reason: "probed points stayed close without a clear off-orbit witness".into() }
    };
    Ok(report(verdict, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamsys::Builtin;
    use std::f64::consts::PI;

    fn fine() -> StepPolicy {
        StepPolicy::with_step(1e-3)
    }

    #[test]
    fn knots_anchor_at_zero() {
        let sys = Builtin::Harmonic.system();
        let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let tau = 2.0 * PI;
        let po = build_pseudo_orbit(&sys, &vec![q; 5], &[tau; 5], 1e-3, 1.0, -2, &fine()).unwrap();
        assert_eq!(po.knot(0), 0.0);
        assert!((po.knot(2) - 2.0 * tau).abs() < 1e-12);
        assert!((po.knot(-2) + 2.0 * tau).abs() < 1e-12);
        assert_eq!(po.segment_at(0.0).unwrap(), 0);
        assert_eq!(po.segment_at(-0.1).unwrap(), -1);
        assert!(matches!(po.segment_at(3.0 * tau), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn true_orbit_is_pseudo_orbit() {
        let sys = Builtin::HenonHeiles.system();
        let x0 = PhasePoint::from_slice(&[0.0, 0.1, 0.35, 0.0]).unwrap();
        let mut pts = vec![x0];
        for _ in 0..4 {
            pts.push(flow::flow_at(&sys, pts.last().unwrap(), 1.0, &fine()).unwrap());
        }
        let po = build_pseudo_orbit(&sys, &pts, &[1.0; 5], 1e-9, 1.0, 0, &fine()).unwrap();
        assert!(po.jump_errors.iter().all(|&e| e < 1e-12));
        for k in 0..5 {
            let c = chain_eval(&sys, &po, k as f64, &fine()).unwrap();
            assert!(c.distance(&pts[k]) < 1e-12);
        }
        let mid = chain_eval(&sys, &po, 2.5, &fine()).unwrap();
        let direct = flow::flow_at(&sys, &pts[2], 0.5, &fine()).unwrap();
        assert!(mid.distance(&direct) < 1e-12);
    }

    #[test]
    fn rotated_jumps_and_rejections() {
        let sys = Builtin::Harmonic.system();
        let r = 2.0;
        // Extra phase 1e-3 per jump on a circle of radius r.
        let pts: Vec<PhasePoint> = (0..6)
            .map(|i| {
                let th = 1e-3 * i as f64;
                PhasePoint::from_slice(&[r * th.cos(), 0.0, -r * th.sin(), 0.0]).unwrap()
            })
            .collect();
        let po = build_pseudo_orbit(&sys, &pts, &[2.0 * PI; 6], 2e-3 * r, 1.0, 0, &fine()).unwrap();
        for e in &po.jump_errors {
            assert!((e - 1e-3 * r).abs() < 1e-5 * r, "{e}");
        }
        let mut far = pts.clone();
        far[3] = PhasePoint::from_slice(&[r + 1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = build_pseudo_orbit(&sys, &far, &[2.0 * PI; 6], 0.1, 1.0, 0, &fine()).unwrap_err();
        assert!(matches!(err, Error::JumpTooLarge { index: 2, .. }));
        let err = build_pseudo_orbit(&sys, &pts, &[2.0 * PI, 0.5, 2.0, 2.0, 2.0, 2.0], 0.1, 1.0, 0, &fine()).unwrap_err();
        assert!(matches!(err, Error::TimeTooShort { index: 1, .. }));
    }

    #[test]
    fn breakdown_chain_shapes() {
        let sys = Builtin::Harmonic.system();
        let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let xi = 0.2;
        let k = 4;
        let y = PhasePoint::from_slice(&[1.0, 0.75 * xi, 0.0, 0.0]).unwrap();
        let po = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, xi / k as f64, k, 2, &fine()).unwrap();
        assert_eq!(po.start_index, -2);
        assert_eq!(po.len(), 2 + 1 + k + 2);
        assert!(po.jump_errors.iter().all(|&e| e < xi / k as f64));
        let c = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &q, 0.01, 3, 1, &fine()).unwrap();
        assert!(c.jump_errors.iter().all(|&e| e < 1e-5));
        assert!(matches!(
            breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, 0.1, 1, 1, &fine()),
            Err(Error::InsufficientSteps { .. })
        ));
    }

    #[test]
    fn reparametrization_class() {
        let a = Reparametrization::new(vec![(-1.0, -1.05), (0.0, 0.0), (2.0, 1.9)], 0.1).unwrap();
        assert!(a.in_class(0.1));
        assert!(!a.in_class(0.04));
        assert!((a.eval(1.0) - 0.95).abs() < 1e-15);
        assert!((a.eval(-0.5) + 0.525).abs() < 1e-15);
        assert!(a.max_ratio_defect() < 0.1);
        assert!(Reparametrization::new(vec![(0.0, 0.0), (1.0, 0.0)], 0.1).is_err());
        assert!(Reparametrization::new(vec![(0.5, 0.5), (1.0, 1.0)], 0.1).is_err());
    }

    #[test]
    fn true_orbit_shadows_itself() {
        let sys = Builtin::Harmonic.system();
        let x0 = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.5]).unwrap();
        let mut pts = vec![x0.clone()];
        for _ in 0..2 {
            pts.push(flow::flow_at(&sys, pts.last().unwrap(), 1.0, &StepPolicy::with_step(1e-2)).unwrap());
        }
        let opts = SearchOptions::default();
        let po = build_pseudo_orbit(&sys, &pts, &[1.0; 3], 1e-6, 1.0, 0, &opts.step).unwrap();
        let r = shadow_search(&sys, &po, 1e-3, &opts).unwrap();
        assert!(r.success);
        assert_eq!(r.budget_spent, 9);
        assert!(r.achieved_eps < 1e-4);
        assert_eq!(r.z.unwrap(), x0);
        assert!(r.alpha.unwrap().slopes().iter().all(|s| *s == 1.0));
        let w = weak_shadow_search(&sys, &po, 1e-3, &opts).unwrap();
        assert!(w.success);
    }

    #[test]
    fn dp_alignment_basics() {
        let a: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let b: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.5]).collect();
        let best = prefix_bottlenecks(&a, &b);
        assert_eq!(best[0], 0.0);
        assert!(best.iter().all(|&v| v <= 0.5 + 1e-15));
    }

    #[test]
    fn pedro_probe_inconclusive() {
        let sys = Builtin::Pedro.system();
        let x = PhasePoint::from_slice(&[0.1, 0.05]).unwrap();
        let r = expansiveness_probe(&sys, &x, 0.05, 2.0, 0.1, &ProbeOptions::default()).unwrap();
        assert!(matches!(r.verdict, ProbeVerdict::Inconclusive { .. }));
    }

    #[test]
    fn saddle_axis_chain_is_shadowed() {
        let sys = linear_saddle_model();
        for delta in [1e-2, 1e-3] {
            let opts = SearchOptions { rep_eps: Some(0.1), ..SearchOptions::default() };
            let po = saddle_axis_pseudo_orbit(delta, &opts.step).unwrap();
            // Exact shadow of the offset-free chain: q = 0.3δ, p = e^{-m} at time 0.
            let m = -po.start_index;
            let oracle = PhasePoint::from_slice(&[0.3 * delta, (-(m as f64)).exp()]).unwrap();
            let at_oracle = shadow_distance(&sys, &po, &oracle, &vec![1.0; po.len()], &opts).unwrap();
            assert!(at_oracle < delta, "{at_oracle}");
            let r = shadow_search(&sys, &po, 10.0 * delta, &opts).unwrap();
            assert!(r.success && r.achieved_eps <= 10.0 * delta, "{r:?}");
            assert!(r.alpha.unwrap().in_class(0.1));
        }
    }

    #[test]
    fn drifting_chain_breaks_shadowing() {
        let sys = Builtin::Harmonic.system();
        let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let (xi, k): (f64, usize) = (0.2, 4);
        let opts = SearchOptions { budget: 400, ..SearchOptions::default() };
        let y = PhasePoint::from_slice(&[1.0, 0.75 * xi, 0.0, 0.0]).unwrap();
        let po = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, xi / k as f64, k, 2, &opts.step).unwrap();
        assert!(po.jump_errors.iter().all(|e| *e < po.delta));
        let r = shadow_search(&sys, &po, xi / 4.0, &opts).unwrap();
        assert!(!r.success && r.z.is_none());
        assert!(r.budget_spent <= 400);
        assert!(!weak_shadow_search(&sys, &po, xi / 4.0, &opts).unwrap().success);
    }

    #[test]
    fn chain_on_one_circle_is_weakly_shadowed() {
        let sys = Builtin::Harmonic.system();
        let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let (xi, k): (f64, usize) = (0.2, 4);
        // Same distance 3ξ/4 as the drifting chain, but measured along q's own circle.
        let angle = 2.0 * (0.375 * xi).asin();
        let y = flow::flow_at(&sys, &q, angle, &StepPolicy::with_step(1e-4)).unwrap();
        assert!((q.distance(&y) - 0.75 * xi).abs() < 1e-9);
        let opts = SearchOptions { budget: 400, ..SearchOptions::default() };
        let po = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, xi / k as f64, k, 2, &opts.step).unwrap();
        let r = weak_shadow_search(&sys, &po, xi / 4.0, &opts).unwrap();
        assert!(r.success && r.achieved_eps < xi / 4.0);
    }

    #[test]
    fn insufficient_drift_steps() {
        let sys = Builtin::Harmonic.system();
        let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = PhasePoint::from_slice(&[1.0, 0.15, 0.0, 0.0]).unwrap();
        let r = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, 0.1, 1, 1, &fine());
        assert!(matches!(r, Err(Error::InsufficientSteps { steps: 1, .. })));
        let same = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &q, 0.1, 1, 1, &fine()).unwrap();
        assert!(same.jump_errors.iter().all(|e| *e < 1e-6));
    }

    #[test]
    fn probe_contrast() {
        let opts = ProbeOptions::default();
        let sys = Builtin::Harmonic.system();
        let x = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.5]).unwrap();
        let r = expansiveness_probe(&sys, &x, 0.1, 5.0, 0.1, &opts).unwrap();
        assert!(matches!(r.verdict, ProbeVerdict::NonExpansiveWitness { .. }));
        let sys = Builtin::SaddleCenter.system();
        let x = PhasePoint::from_slice(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let r = expansiveness_probe(&sys, &x, 0.1, 5.0, 0.1, &opts).unwrap();
        // Offsets start at d₀ = 0.1 δ, so the exit is near ln(δ / d₀) = ln 10.
        match r.verdict {
            ProbeVerdict::Separated { exit_time } => assert!((exit_time / 10f64.ln() - 1.0).abs() < 0.2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weak_spec_examples() {
        let sys = linear_saddle_model();
        let opts = SearchOptions::default();
        let incoming = OrbitArc { point: PhasePoint::from_slice(&[0.0, 0.05]).unwrap(), start: 0.0, end: 1.0 };
        let outgoing = OrbitArc { point: PhasePoint::from_slice(&[0.02, 0.0]).unwrap(), start: 6.0, end: 7.0 };
        let r = weak_spec_check(&sys, &incoming, &outgoing, 5.0, 0.01, &opts).unwrap();
        assert!(r.success && r.achieved_eps < 0.01);

        let sys = Builtin::Harmonic.system();
        let inner = OrbitArc { point: PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap(), start: 0.0, end: 1.0 };
        let outer = OrbitArc { point: PhasePoint::from_slice(&[1.3, 0.0, 0.0, 0.0]).unwrap(), start: 3.0, end: 4.0 };
        let small = SearchOptions { budget: 300, ..opts.clone() };
        assert!(!weak_spec_check(&sys, &inner, &outer, 2.0, 0.1, &small).unwrap().success);
        let same = OrbitArc { point: flow::flow_at(&sys, &inner.point, 3.0, &opts.step).unwrap(), start: 3.0, end: 4.0 };
        assert!(weak_spec_check(&sys, &inner, &same, 2.0, 0.01, &opts).unwrap().success);
        assert!(weak_spec_check(&sys, &inner, &same, 5.0, 0.01, &opts).is_err());
    }
}
