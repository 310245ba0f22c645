//! Embedded release gate: criteria 1 to 11 as deterministic numeric checks.
//! Criterion 12 (byte-identical reruns) needs two processes and lives with the
//! command-line front end.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, TAU};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::StepPolicy;
use crate::hamsys::{cat_map, slab_witness, Builtin, PhasePoint, SuspensionState, SuspensionSystem};
use crate::linalg;
use crate::orbits::{self, OrbitSearch, UNIT_BAND_EXACT};
use crate::poincare::{self, Section};
use crate::shades::{self, ProbeOptions, ProbeVerdict, SearchOptions};
use crate::spectra::{self, SpectrumPolicy};
use crate::splitting::{self, CandidateSplitting, LinearCocycle, DEFAULT_HORIZON, DEFAULT_THETA};

pub const FORMAT_VERSION: u32 = 1;
const SEED: u64 = 0x5eed_2024;

/// `(id, name, runtime limit in seconds)`.
pub const CRITERIA: [(u8, &str, f64); 11] = [
    (1, "symplectic eigenvalue pairing", 10.0),
    (2, "transversal flow symplecticity", 120.0),
    (3, "lyapunov pairing and zero sum", 300.0),
    (4, "pedro field fidelity", 1.0),
    (5, "domination threshold closed form", 10.0),
    (6, "dominated implies partially hyperbolic", 30.0),
    (7, "hyperbolic shadowing", 60.0),
    (8, "breakdown near a continuum of periodic orbits", 120.0),
    (9, "expansiveness contrast", 60.0),
    (10, "spectral nudge", 5.0),
    (11, "suspension semantics", 10.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CriterionOutcome {
    /// One line: `criterion  7 PASS hyperbolic shadowing | label measured <= bound; ...`.
    pub fn summary(&self) -> String {
        let checks: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                let op = match c.relation {
                    Relation::AtMost => "<=",
                    Relation::AtLeast => ">=",
                };
                format!("{} {:.3e} {} {:.3e}", c.label, c.measured, op, c.bound)
            })
            .collect();
        let mut line = format!(
            "criterion {:>2} {} {} | {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            checks.join("; ")
        );
        if let Some(e) = &self.error {
            line.push_str(&format!(" | error: {e}"));
        }
        line
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelftestConfig {
    /// Per-criterion bound scale: at-most bounds are multiplied by it,
    /// at-least bounds divided by it. Debug aid for exercising failures.
    pub perturb: BTreeMap<u8, f64>,
    /// Subset of criteria to run; all when empty.
    pub only: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub format_version: u32,
    pub config: SelftestConfig,
    pub passed: bool,
    pub criteria: Vec<CriterionOutcome>,
}

struct Checks {
    scale: f64,
    list: Vec<Check>,
}

impl Checks {
    fn new(scale: f64) -> Self {
        Self { scale, list: vec![] }
    }

    fn at_most(&mut self, label: &str, measured: f64, bound: f64) {
        let bound = bound * self.scale;
        self.list.push(Check { label: label.into(), measured, relation: Relation::AtMost, bound, passed: measured <= bound });
    }

    fn at_least(&mut self, label: &str, measured: f64, bound: f64) {
        let bound = bound / self.scale;
        self.list.push(Check { label: label.into(), measured, relation: Relation::AtLeast, bound, passed: measured >= bound });
    }
}

pub fn criterion_name(id: u8) -> Option<&'static str> {
    CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1)
}

pub fn run_criterion(id: u8, config: &SelftestConfig) -> Result<CriterionOutcome> {
    let name = criterion_name(id).ok_or(Error::IndexOutOfRange { index: id as usize, max: CRITERIA.len() })?;
    let mut checks = Checks::new(config.perturb.get(&id).copied().unwrap_or(1.0));
    let run = match id {
        1 => symplectic_pairing(&mut checks),
        2 => transversal_symplecticity(&mut checks),
        3 => lyapunov_pairing(&mut checks),
        4 => pedro_fidelity(&mut checks),
        5 => domination_threshold(&mut checks),
        6 => dominated_partial(&mut checks),
        7 => hyperbolic_shadowing(&mut checks),
        8 => breakdown(&mut checks),
        9 => expansiveness(&mut checks),
        10 => nudge(&mut checks),
        _ => suspension(&mut checks),
    };
    let error = run.err().map(|e| e.to_string());
    let passed = error.is_none() && !checks.list.is_empty() && checks.list.iter().all(|c| c.passed);
    Ok(CriterionOutcome { id, name: name.into(), passed, checks: checks.list, error })
}

pub fn run_selftest(config: &SelftestConfig) -> Result<SelftestReport> {
    let ids: Vec<u8> = if config.only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { config.only.clone() };
    let criteria = ids.iter().map(|&id| run_criterion(id, config)).collect::<Result<Vec<_>>>()?;
    Ok(SelftestReport {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    })
}

// ---------------------------------------------------------------------------
// Generators

fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// `exp(J S)` with `S` symmetric, entries uniform in `[-1, 1]`.
pub fn random_symplectic(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let d = 2 * n;
    let mut s = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in r..d {
            let v = rng.gen_range(-1.0..=1.0);
            s[(r, c)] = v;
            s[(c, r)] = v;
        }
    }
    (linalg::symplectic_j(n) * s).exp()
}

/// Rejection-samples `random_symplectic(1)` until the trace lies in `range`.
fn sp2_with_trace(rng: &mut impl Rng, accept: impl Fn(f64) -> bool) -> DMatrix<f64> {
    loop {
        let a = random_symplectic(1, rng);
        if accept(a.trace()) {
            return a;
        }
    }
}

/// Point of Hénon–Heiles at energy `e` with `q1 = p2 = 0` and `q2` given.
pub fn henon_heiles_seed(q2: f64, energy: f64) -> Result<PhasePoint> {
    let potential = 0.5 * q2 * q2 - q2 * q2 * q2 / 3.0;
    let kinetic = energy - potential;
    if !(kinetic > 0.0) {
        return Err(Error::InvalidParameter(format!("q2 = {q2} lies outside the energy level {energy}")));
    }
    PhasePoint::from_slice(&[0.0, q2, (2.0 * kinetic).sqrt(), 0.0])
}

// ---------------------------------------------------------------------------
// Criteria

fn symplectic_pairing(c: &mut Checks) -> Result<()> {
    let mut rng = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let a = random_symplectic(1 + i % 3, &mut rng);
        let q = orbits::eigen_quadruples(&a, UNIT_BAND_EXACT)?;
        worst = worst.max(q.pairing_defect).max(q.conjugation_defect);
    }
    c.at_most("random_pair_defect", worst, 1e-6);

    let search = OrbitSearch { step: StepPolicy::with_step(1e-4), ..OrbitSearch::default() };
    let seeds = [
        (Builtin::Harmonic, PhasePoint::from_slice(&[1.0, 0.3, 0.0, 0.4])?, Section::coordinate(4, 2, 0.0, -1)),
        (Builtin::SaddleCenter, PhasePoint::from_slice(&[0.0, 1.0, 0.0, 0.0])?, Section::coordinate(4, 3, 0.0, -1)),
        // Invariant line q1 = p1 = 0 at energy 1/8.
        (Builtin::HenonHeiles, PhasePoint::from_slice(&[0.0, 0.0, 0.0, 0.5])?, Section::coordinate(4, 1, 0.0, 1)),
    ];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (b, seed, section) in seeds {
        let orbit = orbits::find_periodic(&b.system(), &seed, &section, &search)?;
        let q = orbits::eigen_quadruples(&orbit.monodromy, UNIT_BAND_EXACT)?;
        worst = worst.max(q.pairing_defect).max(q.conjugation_defect);
        count += 1;
    }
    c.at_most("monodromy_pair_defect", worst, 1e-6);
    c.at_least("monodromies", count as f64, 3.0);
    Ok(())
}

/// Twenty bounded seeds per system; saddle-center seeds sit on its center
/// manifold so `|t| ≤ 50` stays in floating-point range.
fn criterion2_seeds(b: Builtin, rng: &mut ChaCha8Rng) -> Vec<PhasePoint> {
    let mut out = Vec::new();
    while out.len() < 20 {
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let x = match b {
            Builtin::Harmonic => v.clone(),
            Builtin::HenonHeiles => v.iter().map(|a| 0.4 * a).collect(),
            _ => vec![0.0, v[1], 0.0, v[3]],
        };
        let x = PhasePoint::new(x).expect("finite coordinates");
        let sys = b.system();
        let ok = match b {
            Builtin::HenonHeiles => sys.eval_h(&x).is_ok_and(|e| e < 0.15),
            _ => true,
        };
        if ok && sys.is_regular(&x, 1e-3) {
            out.push(x);
        }
    }
    out
}

fn transversal_symplecticity(c: &mut Checks) -> Result<()> {
    let mut rng = rng(2);
    let policy = StepPolicy::with_step(1e-4);
    for b in [Builtin::Harmonic, Builtin::HenonHeiles, Builtin::SaddleCenter] {
        let sys = b.system();
        let mut worst: f64 = 0.0;
        for x in criterion2_seeds(b, &mut rng) {
            let t = rng.gen_range(-50.0..=50.0);
            worst = worst.max(poincare::linear_poincare(&sys, &x, t, &policy)?.symplectic_defect());
        }
        c.at_most(&format!("{}_form_defect", b.name()), worst, 1e-8);
    }
    Ok(())
}

fn lyapunov_pairing(c: &mut Checks) -> Result<()> {
    let policy = SpectrumPolicy::default();
    let hh = spectra::lyapunov_spectrum(&Builtin::HenonHeiles.system(), &henon_heiles_seed(0.1, 0.125)?, 1e4, &policy)?;
    c.at_most("henon_heiles_pairing_defect", hh.pairing_defect, 5e-3);
    c.at_most("henon_heiles_sum_defect", hh.sum_defect, 5e-3);
    let x = PhasePoint::from_slice(&[1.0, 0.2, 0.0, 0.5])?;
    let ho = spectra::lyapunov_spectrum(&Builtin::Harmonic.system(), &x, 1e4, &policy)?;
    c.at_most("harmonic_max_abs_exponent", ho.exponents.iter().map(|l| l.abs()).fold(0.0, f64::max), 1e-3);
    Ok(())
}

fn pedro_fidelity(c: &mut Checks) -> Result<()> {
    let sys = Builtin::Pedro.system();
    let mut rng = rng(4);
    let samples: Vec<PhasePoint> = (0..100)
        .map(|_| PhasePoint::from_slice(&[rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0)]))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for x in &samples {
        let (q, p) = (x.coords()[0], x.coords()[1]);
        let expected = [-6.0 * q * p, 3.0 * p * p - 3.0 * q * q];
        let f = sys.hamiltonian_field(x)?;
        for k in 0..2 {
            worst = worst.max((f[k] - expected[k]).abs() / expected[k].abs().max(1.0));
        }
    }
    c.at_most("field_formula_defect", worst, 1e-12);
    c.at_most("rotation_equivariance_defect", sys.symmetry_defect(&linalg::rotation(TAU / 3.0), &samples)?, 1e-12);
    let origin = PhasePoint::from_slice(&[0.0, 0.0])?;
    c.at_least("origin_flagged_singular", if sys.is_regular(&origin, 1e-8) { 0.0 } else { 1.0 }, 1.0);
    Ok(())
}

fn unit_columns(dim: usize, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(dim, idx.len(), |r, c| if r == idx[c] { 1.0 } else { 0.0 })
}

fn domination_threshold(c: &mut Checks) -> Result<()> {
    let spacing = 0.01;
    let grid: Vec<f64> = (1..=500).map(|i| spacing * i as f64).collect();
    let mut worst: f64 = 0.0;
    let mut exact = 0;
    for g in [0.5, 1.0, 2.0] {
        let cocycle = LinearCocycle::diagonal(&[-g / 2.0, g / 2.0], 2)?;
        let split = CandidateSplitting::constant(vec![unit_columns(2, &[0]), unit_columns(2, &[1])], 2)?;
        let threshold = LN_2 / g;
        let found = splitting::min_domination_scale(&cocycle, &split, 0, 1, &grid, DEFAULT_THETA)?
            .ok_or(Error::InvalidSplitting(format!("no domination for gap {g}")))?;
        let expected = grid.iter().copied().find(|&l| l >= threshold).expect("grid spans the threshold");
        exact += usize::from(found == expected);
        worst = worst.max((found - threshold) / threshold);
    }
    c.at_most("max_relative_error", worst, spacing);
    c.at_least("first_grid_point_hits", exact as f64, 3.0);
    Ok(())
}

/// One saddle plane with rate `a` and `n − 1` center planes whose
/// generators `[[b, w], [w', −b]]` grow at most at rate `a / 3`.
fn random_dominated_cocycle(rng: &mut ChaCha8Rng) -> Result<LinearCocycle> {
    let planes = rng.gen_range(2..=3usize);
    let a = rng.gen_range(0.5..=2.0);
    let mut blocks = vec![DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, -a])];
    for _ in 1..planes {
        let w = rng.gen_range(0.2..=2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let b = rng.gen_range(0.0..=a / 3.0);
        let skew = rng.gen_range(0.5..=1.5);
        blocks.push(DMatrix::from_row_slice(2, 2, &[b, w * skew, -w / skew, -b]));
    }
    LinearCocycle::new(linalg::from_pair_order(&linalg::block_diag(&blocks)), 2)
}

fn dominated_partial(c: &mut Checks) -> Result<()> {
    let mut rng = rng(6);
    let grid: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
    let (mut dominated, mut refined) = (0, 0);
    for _ in 0..50 {
        let cocycle = random_dominated_cocycle(&mut rng)?;
        let d = splitting::Cocycle::dim(&cocycle);
        let rest: Vec<usize> = (1..d).collect();
        let two = CandidateSplitting::constant(vec![unit_columns(d, &[0]), unit_columns(d, &rest)], 2)?;
        if splitting::min_domination_scale(&cocycle, &two, 1, 0, &grid, DEFAULT_THETA)?.is_some() {
            dominated += 1;
            if splitting::refine_dominated(&cocycle, &two, DEFAULT_HORIZON, &grid, DEFAULT_THETA)?.scale.is_some() {
                refined += 1;
            }
        }
    }
    c.at_least("dominated_cocycles", dominated as f64, 50.0);
    c.at_least("partially_hyperbolic_refinements", refined as f64, 50.0);
    Ok(())
}

fn hyperbolic_shadowing(c: &mut Checks) -> Result<()> {
    let sys = shades::linear_saddle_model();
    let opts = SearchOptions { rep_eps: Some(0.1), ..SearchOptions::default() };
    let mut worst: f64 = 0.0;
    let mut in_class = 0;
    for delta in [1e-3, 1e-2] {
        let po = shades::saddle_axis_pseudo_orbit(delta, &opts.step)?;
        let r = shades::shadow_search(&sys, &po, 10.0 * delta, &opts)?;
        worst = worst.max(if r.success { r.achieved_eps / delta } else { f64::INFINITY });
        in_class += usize::from(r.alpha.is_some_and(|a| a.in_class(0.1)));
    }
    c.at_most("achieved_eps_over_delta", worst, 10.0);
    c.at_least("alpha_in_rep_0_1", in_class as f64, 2.0);
    Ok(())
}

fn breakdown(c: &mut Checks) -> Result<()> {
    let sys = Builtin::Harmonic.system();
    let (xi, k) = (0.2, 4usize);
    let eps = xi / 4.0;
    let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0])?;
    let opts = SearchOptions { budget: 400, ..SearchOptions::default() };
    let outward = PhasePoint::from_slice(&[1.0, 0.75 * xi, 0.0, 0.0])?;
    let po = shades::breakdown_pseudo_orbit(&sys, &q, TAU, &outward, xi / k as f64, k, 2, &opts.step)?;
    let jump = po.jump_errors.iter().copied().fold(0.0, f64::max);
    c.at_most("max_jump_over_delta", jump / po.delta, 1.0);
    let r = shades::shadow_search(&sys, &po, eps, &opts)?;
    c.at_least("shadow_best_over_eps", if r.success { 0.0 } else { r.achieved_eps / eps }, 1.0);

    // Same chain, with the drift taken along q's own circle.
    let angle = 2.0 * (0.375 * xi).asin();
    let along = crate::flow::flow_at(&sys, &q, angle, &StepPolicy::with_step(1e-4))?;
    let po = shades::breakdown_pseudo_orbit(&sys, &q, TAU, &along, xi / k as f64, k, 2, &opts.step)?;
    let w = shades::weak_shadow_search(&sys, &po, eps, &opts)?;
    c.at_most("confined_weak_over_eps", if w.success { w.achieved_eps / eps } else { f64::INFINITY }, 1.0);
    Ok(())
}

fn expansiveness(c: &mut Checks) -> Result<()> {
    let opts = ProbeOptions::default();
    let (delta, window, eps) = (0.1, 5.0, 0.1);
    let x = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.5])?;
    let r = shades::expansiveness_probe(&Builtin::Harmonic.system(), &x, delta, window, eps, &opts)?;
    let witness = matches!(r.verdict, ProbeVerdict::NonExpansiveWitness { .. });
    c.at_least("harmonic_witness", if witness { 1.0 } else { 0.0 }, 1.0);
    let x = PhasePoint::from_slice(&[0.0, 1.0, 0.0, 0.0])?;
    let r = shades::expansiveness_probe(&Builtin::SaddleCenter.system(), &x, delta, window, eps, &opts)?;
    let rel = match r.verdict {
        ProbeVerdict::Separated { exit_time } => (exit_time / (delta / r.offset).ln() - 1.0).abs(),
        _ => f64::INFINITY,
    };
    c.at_most("saddle_exit_relative_error", rel, 0.2);
    Ok(())
}

fn nudge(c: &mut Checks) -> Result<()> {
    let mut rng = rng(10);
    let delta = 0.05;
    let mut ok = 0;
    for _ in 0..100 {
        let a = sp2_with_trace(&mut rng, |t| t > 2.0 && t <= 2.01);
        if let Ok(b) = orbits::spectral_nudge(&a, delta) {
            let close = linalg::op_norm(&(&b - &a))? <= delta;
            let symplectic = linalg::symplectic_defect(&b) <= 1e-10;
            ok += usize::from(close && symplectic && b.trace().abs() <= 2.0);
        }
    }
    c.at_least("nudged_within_delta", ok as f64, 100.0);
    let mut refused = 0;
    for _ in 0..20 {
        let a = sp2_with_trace(&mut rng, |t| t >= 3.0);
        refused += usize::from(matches!(orbits::spectral_nudge(&a, 1e-3), Err(Error::NudgeOutOfReach { .. })));
    }
    c.at_least("far_matrices_refused", refused as f64, 20.0);
    Ok(())
}

fn torus_gap(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a.iter().zip(b).map(|(x, y)| {
        let d = (x - y).rem_euclid(1.0);
        d.min(1.0 - d)
    })
    .fold(0.0, f64::max)
}

fn suspension(c: &mut Checks) -> Result<()> {
    let susp = SuspensionSystem::cat_map_constant(1.0)?;
    let mut rng = rng(11);
    let mut formula: f64 = 0.0;
    let mut semigroup: f64 = 0.0;
    let mut states = Vec::new();
    for _ in 0..50 {
        let st = SuspensionState { base: [rng.gen::<f64>(), rng.gen::<f64>()], r: rng.gen_range(0.0..1.0) };
        let s = rng.gen_range(0.0..10.0);
        let got = susp.flow(&st, s)?;
        // With unit ceiling the crossing count is floor(r + s).
        let n = (st.r + s).floor() as usize;
        let mut x = st.base;
        for _ in 0..n {
            x = cat_map(&x);
        }
        formula = formula.max(torus_gap(&got.base, &x)).max((got.r - (st.r + s - n as f64)).abs());
        let s2 = rng.gen_range(-5.0..5.0);
        let twice = susp.flow(&got, s2)?;
        let once = susp.flow(&st, s + s2)?;
        semigroup = semigroup.max(torus_gap(&twice.base, &once.base)).max((twice.r - once.r).abs());
        states.push(SuspensionState { base: st.base, r: 0.5 * rng.gen_range(0.01..0.99) });
    }
    c.at_most("formula_defect", formula, 1e-12);
    c.at_most("semigroup_defect", semigroup, 1e-12);
    let w = slab_witness(&susp, &states, 20)?;
    c.at_least("slab_images_checked", w.images_checked as f64, 1000.0);
    c.at_most("slab_upper_landings", w.violations as f64, 0.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_symplectic_is_symplectic() {
        let mut rng = rng(99);
        for n in 1..=3 {
            let a = random_symplectic(n, &mut rng);
            assert!(linalg::symplectic_defect(&a) < 1e-10);
        }
    }

    #[test]
    fn henon_heiles_seed_energy() {
        let x = henon_heiles_seed(0.1, 0.125).unwrap();
        let e = Builtin::HenonHeiles.system().eval_h(&x).unwrap();
        assert!((e - 0.125).abs() < 1e-15);
        assert!(henon_heiles_seed(1.0, 0.125).is_err());
    }

    #[test]
    fn perturbation_forces_failure() {
        let mut cfg = SelftestConfig { only: vec![4], ..SelftestConfig::default() };
        assert!(run_selftest(&cfg).unwrap().passed);
        cfg.perturb.insert(4, 1e-30);
        let r = run_selftest(&cfg).unwrap();
        assert!(!r.passed);
        assert!(r.criteria[0].summary().contains("FAIL pedro field fidelity"));
    }

    #[test]
    fn unknown_criterion() {
        assert!(run_criterion(12, &SelftestConfig::default()).is_err());
    }
}
