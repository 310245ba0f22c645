//! Finite-sample checks of hyperbolic, dominated and partially hyperbolic
//! splittings of the transversal cocycle.
//!
//! Every verdict concerns the sampled points only.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, StepPolicy};
use crate::hamsys::{HamiltonianSystem, PhasePoint};
use crate::linalg;
use crate::poincare::{self, FrameRule, TransversalFrame};

pub const DEFAULT_THETA: f64 = 0.5;
pub const SLACK: f64 = 1e-6;
pub const DEFAULT_HORIZON: f64 = 20.0;
pub const DEFAULT_GAP_TOL: f64 = 1e-8;
const SAMPLE_NOTE: &str = "verdict refers to the sampled orbit points only";

/// A linear cocycle over a finite set of base points, in orthonormal frame
/// coordinates at each point.
pub trait Cocycle: Sync {
    /// Fibre dimension.
    fn dim(&self) -> usize;
    fn samples(&self) -> usize;
    /// Matrix of the time-`t` map from the frame at sample `s` into an
    /// orthonormal frame at the image point. `t` may be negative.
    fn map(&self, s: usize, t: f64) -> Result<DMatrix<f64>>;
    /// Inverse of `map(s, t)`, computed by flowing back from the image
    /// rather than by matrix inversion.
    fn inverse_map(&self, s: usize, t: f64) -> Result<DMatrix<f64>>;
}

/// Constant-coefficient cocycle `exp(t·A)` repeated over `samples` identical points.
#[derive(Debug, Clone)]
pub struct LinearCocycle {
    pub generator: DMatrix<f64>,
    pub samples: usize,
}

impl LinearCocycle {
    pub fn new(generator: DMatrix<f64>, samples: usize) -> Result<Self> {
        if generator.nrows() != generator.ncols() || samples == 0 {
            return Err(Error::InvalidParameter("generator must be square and samples positive".into()));
        }
        Ok(Self { generator, samples })
    }

    pub fn diagonal(rates: &[f64], samples: usize) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(rates)), samples)
    }

    pub fn identity(dim: usize, samples: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(dim, dim), samples)
    }
}

impl Cocycle for LinearCocycle {
    fn dim(&self) -> usize {
        self.generator.nrows()
    }

    fn samples(&self) -> usize {
        self.samples
    }

    fn map(&self, s: usize, t: f64) -> Result<DMatrix<f64>> {
        check_sample(s, self.samples)?;
        Ok((&self.generator * t).exp())
    }

    fn inverse_map(&self, s: usize, t: f64) -> Result<DMatrix<f64>> {
        self.map(s, -t)
    }
}

/// Transversal cocycle of a Hamiltonian flow at sampled orbit points.
#[derive(Debug, Clone)]
pub struct OrbitCocycle {
    pub system: HamiltonianSystem,
    pub frames: Vec<TransversalFrame>,
    pub policy: StepPolicy,
}

impl OrbitCocycle {
    pub fn new(system: HamiltonianSystem, points: &[PhasePoint], policy: StepPolicy) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("no sample points".into()));
        }
        let frames = points
            .iter()
            .map(|p| poincare::transversal_frame(&system, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { system, frames, policy })
    }

    /// `count` points spaced `spacing` apart along the orbit of `x0`.
    pub fn along(
        system: HamiltonianSystem,
        x0: &PhasePoint,
        count: usize,
        spacing: f64,
        policy: StepPolicy,
    ) -> Result<Self> {
        if count == 0 || spacing <= 0.0 {
            return Err(Error::InvalidParameter("count and spacing must be positive".into()));
        }
        let mut points = vec![x0.clone()];
        let mut x = x0.clone();
        for _ in 1..count {
            x = flow::flow_at(&system, &x, spacing, &policy)?;
            points.push(x.clone());
        }
        Self::new(system, &points, policy)
    }
}

impl Cocycle for OrbitCocycle {
    fn dim(&self) -> usize {
        self.system.dim() - 2
    }

    fn samples(&self) -> usize {
        self.frames.len()
    }

    fn map(&self, s: usize, t: f64) -> Result<DMatrix<f64>> {
        check_sample(s, self.frames.len())?;
        Ok(poincare::linear_poincare_from(&self.system, &self.frames[s], t, &self.policy, FrameRule::Canonical)?.p)
    }

    fn inverse_map(&self, s: usize, t: f64) -> Result<DMatrix<f64>> {
        check_sample(s, self.frames.len())?;
        let src = &self.frames[s];
        let image = flow::flow_at(&self.system, &src.x, t, &self.policy)?;
        let mid = poincare::transversal_frame(&self.system, &image)?;
        let back = flow::tangent_flow(&self.system, &image, -t, &self.policy)?;
        Ok(src.basis.transpose() * back.m * mid.basis)
    }
}

fn check_sample(s: usize, n: usize) -> Result<()> {
    if s >= n {
        return Err(Error::IndexOutOfRange { index: s, max: n.saturating_sub(1) });
    }
    Ok(())
}

/// Blocks ordered by decreasing finite-time growth rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSplitting {
    pub block_dims: Vec<usize>,
    /// `bases_at[s][b]`: orthonormal basis (fibre coordinates) of block `b` at sample `s`.
    #[serde(skip)]
    pub bases_at: Vec<Vec<DMatrix<f64>>>,
    /// Finite-time rates at each sample, non-increasing.
    pub rates_at: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl CandidateSplitting {
    /// The same blocks at every sample.
    pub fn constant(blocks: Vec<DMatrix<f64>>, samples: usize) -> Result<Self> {
        let dim = blocks.first().map_or(0, |b| b.nrows());
        let mut assembled = DMatrix::zeros(dim, 0);
        for b in &blocks {
            if b.nrows() != dim || b.ncols() == 0 {
                return Err(Error::InvalidSplitting("blocks must be non-empty with equal row count".into()));
            }
            let c = assembled.ncols();
            assembled = assembled.insert_columns(c, b.ncols(), 0.0);
            assembled.columns_mut(c, b.ncols()).copy_from(b);
        }
        if assembled.ncols() != dim || linalg::orthonormalize(&assembled).is_err() {
            return Err(Error::InvalidSplitting("blocks do not assemble to a full-rank basis".into()));
        }
        let blocks = blocks.iter().map(linalg::orthonormalize).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            block_dims: blocks.iter().map(|b| b.ncols()).collect(),
            bases_at: vec![blocks; samples],
            rates_at: vec![],
            horizon: 0.0,
        })
    }

    pub fn blocks(&self) -> usize {
        self.block_dims.len()
    }

    fn check_block(&self, b: usize) -> Result<()> {
        if b >= self.block_dims.len() {
            return Err(Error::IndexOutOfRange { index: b, max: self.block_dims.len().saturating_sub(1) });
        }
        Ok(())
    }

    fn check_against(&self, cocycle: &dyn Cocycle) -> Result<()> {
        if self.bases_at.len() != cocycle.samples() {
            return Err(Error::InvalidSplitting(format!(
                "splitting has {} samples, cocycle {}",
                self.bases_at.len(),
                cocycle.samples()
            )));
        }
        if self.block_dims.iter().sum::<usize>() != cocycle.dim() {
            return Err(Error::InvalidSplitting("block dimensions do not sum to the fibre dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingPolicy {
    pub horizon: f64,
    /// Smallest admissible difference between rates of neighbouring blocks.
    pub gap_tol: f64,
    /// Explicit block dimensions; otherwise blocks follow the rate gaps at the first sample.
    pub dims: Option<Vec<usize>>,
}

impl Default for SplittingPolicy {
    fn default() -> Self {
        Self { horizon: DEFAULT_HORIZON, gap_tol: DEFAULT_GAP_TOL, dims: None }
    }
}

/// Singular values (non-increasing) with left and right singular vectors in the same order.
fn sorted_svd(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let svd = linalg::svd(m)?;
    let u = svd.u.ok_or(Error::EigenFailure)?;
    let v = svd.v_t.ok_or(Error::EigenFailure)?.transpose();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    let pick = |m: &DMatrix<f64>| DMatrix::from_columns(&order.iter().map(|&i| m.column(i).into_owned()).collect::<Vec<_>>());
    Ok((sv, pick(&u), pick(&v)))
}

/// Finite-time singular data of one time-`t` map, read from the map itself for
/// the dominant directions and from its inverse for the recessive ones, so
/// that both ends of the spectrum stay above rounding noise.
struct TwoSided {
    /// `ln σ_i / |t|`, non-increasing.
    rates: Vec<f64>,
    sv: Vec<f64>,
    v: DMatrix<f64>,
    inv_sv: Vec<f64>,
    inv_u: DMatrix<f64>,
}

impl TwoSided {
    fn new(m: &DMatrix<f64>, m_inv: &DMatrix<f64>, t: f64) -> Result<Self> {
        let (sv, _, v) = sorted_svd(m)?;
        let (inv_sv, inv_u, _) = sorted_svd(m_inv)?;
        let k = sv.len();
        let rates = (0..k)
            .map(|i| {
                let rel = sv[i] / sv[0];
                let rel_inv = inv_sv[k - 1 - i] / inv_sv[0];
                if rel >= rel_inv { sv[i].ln() / t.abs() } else { -inv_sv[k - 1 - i].ln() / t.abs() }
            })
            .collect();
        Ok(Self { rates, sv, v, inv_sv, inv_u })
    }

    /// Span of the `k − r` least expanded directions.
    fn recessive(&self, r: usize) -> DMatrix<f64> {
        let k = self.sv.len();
        if r == 0 {
            return DMatrix::identity(k, k);
        }
        // Subspace error ~ (largest singular value) / (gap at the cut).
        let err = self.sv[0] / (self.sv[r - 1] - self.sv[r]).max(f64::MIN_POSITIVE);
        let err_inv = self.inv_sv[0] / (self.inv_sv[k - r - 1] - self.inv_sv[k - r]).max(f64::MIN_POSITIVE);
        if err <= err_inv {
            self.v.columns(r, k - r).into_owned()
        } else {
            self.inv_u.columns(0, k - r).into_owned()
        }
    }
}

/// Right singular vectors of `m`, sorted by decreasing singular value.
fn right_vectors(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(sorted_svd(m)?.2)
}

/// Orthonormal basis of `span(a) ∩ span(b)` of dimension `d`.
fn intersect(a: &DMatrix<f64>, b: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let (_, u, _) = sorted_svd(&(a.transpose() * b))?;
    linalg::orthonormalize(&(a * u.columns(0, d)))
}

fn dims_from_rates(rates: &[f64], gap_tol: f64) -> Result<Vec<usize>> {
    let mut dims = vec![1];
    let mut best_gap: f64 = 0.0;
    for w in rates.windows(2) {
        let gap = w[0] - w[1];
        best_gap = best_gap.max(gap);
        if gap > gap_tol {
            dims.push(1);
        } else {
            *dims.last_mut().unwrap() += 1;
        }
    }
    if dims.len() < 2 {
        return Err(Error::RankCollapse { gap: best_gap });
    }
    Ok(dims)
}

/// Blocks as intersections of the forward slow filtration and the backward
/// fast filtration at each sample.
pub fn estimate_splitting(cocycle: &dyn Cocycle, policy: &SplittingPolicy) -> Result<CandidateSplitting> {
    if !(policy.horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let k = cocycle.dim();
    if k == 0 {
        return Err(Error::RankCollapse { gap: 0.0 });
    }
    let h = policy.horizon;
    let per_sample: Vec<Result<(TwoSided, TwoSided)>> = (0..cocycle.samples())
        .into_par_iter()
        .map(|s| {
            let fwd = TwoSided::new(&cocycle.map(s, h)?, &cocycle.inverse_map(s, h)?, h)?;
            let bwd = TwoSided::new(&cocycle.map(s, -h)?, &cocycle.inverse_map(s, -h)?, h)?;
            Ok((fwd, bwd))
        })
        .collect();
    let per_sample = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    let dims = match &policy.dims {
        Some(d) => {
            if d.iter().sum::<usize>() != k || d.len() < 2 || d.contains(&0) {
                return Err(Error::InvalidSplitting(format!("dims {d:?} do not partition {k}")));
            }
            d.clone()
        }
        None => dims_from_rates(&per_sample[0].0.rates, policy.gap_tol)?,
    };
    let mut bases_at = Vec::with_capacity(per_sample.len());
    let mut rates_at = Vec::with_capacity(per_sample.len());
    for (fwd, bwd) in per_sample {
        let mut start = 0;
        let mut blocks = Vec::with_capacity(dims.len());
        for &d in &dims {
            let end = start + d;
            let rates = &fwd.rates;
            if end < k && rates[end - 1] - rates[end] <= policy.gap_tol {
                return Err(Error::RankCollapse { gap: rates[end - 1] - rates[end] });
            }
            // Forward rates at or below this block.
            let slow = fwd.recessive(start);
            // Forward rates at or above this block: least expanded backwards.
            let fast = bwd.recessive(k - end);
            blocks.push(intersect(&slow, &fast, d)?);
            start = end;
        }
        bases_at.push(blocks);
        rates_at.push(fwd.rates);
    }
    Ok(CandidateSplitting { block_dims: dims, bases_at, rates_at, horizon: h })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplittingReport {
    pub verdict: Verdict,
    pub scale: f64,
    pub worst_product: f64,
    pub witness_index: Option<usize>,
    pub block_dims: Vec<usize>,
    pub theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub special_case: Option<String>,
    pub note: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<SplittingReport>,
}

impl SplittingReport {
    fn from_values(values: &[f64], scale: f64, theta: f64, dims: &[usize]) -> Self {
        let (witness, worst) = values
            .iter()
            .copied()
            .enumerate()
            .fold((None, f64::NEG_INFINITY), |(wi, wv), (i, v)| if v > wv || v.is_nan() { (Some(i), v) } else { (wi, wv) });
        let verdict = if worst <= theta + SLACK { Verdict::Holds } else { Verdict::Fails };
        Self {
            verdict,
            scale,
            worst_product: worst,
            witness_index: witness,
            block_dims: dims.to_vec(),
            theta,
            special_case: None,
            note: SAMPLE_NOTE.into(),
            parts: vec![],
        }
    }

    fn aggregate(parts: Vec<SplittingReport>, scale: f64, theta: f64, dims: &[usize]) -> Self {
        let worst = parts.iter().max_by(|a, b| a.worst_product.total_cmp(&b.worst_product));
        let verdict = if parts.iter().all(|p| p.verdict == Verdict::Holds) {
            Verdict::Holds
        } else if parts.iter().any(|p| p.verdict == Verdict::Fails) {
            Verdict::Fails
        } else {
            Verdict::Inconclusive
        };
        Self {
            verdict,
            scale,
            worst_product: worst.map_or(f64::NAN, |w| w.worst_product),
            witness_index: worst.and_then(|w| w.witness_index),
            block_dims: dims.to_vec(),
            theta,
            special_case: None,
            note: SAMPLE_NOTE.into(),
            parts,
        }
    }
}

/// `‖P^ℓ|B‖` and `‖P^{-ℓ}|P^ℓ B‖ = 1/σ_min(P^ℓ B)` for one block at one sample.
fn restricted_norms(p: &DMatrix<f64>, block: &DMatrix<f64>) -> Result<(f64, f64)> {
    let pb = p * block;
    let sv = linalg::singular_values(&pb)?;
    Ok((sv.max(), 1.0 / sv.min()))
}

fn check_scale(scale: f64, theta: f64) -> Result<()> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter("scale must be positive".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter("theta must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Per-sample values of `f(P^ℓ(x_s), blocks at x_s)`, evaluated concurrently.
fn per_sample<F>(cocycle: &dyn Cocycle, split: &CandidateSplitting, scale: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&DMatrix<f64>, &[DMatrix<f64>]) -> Result<f64> + Sync,
{
    split.check_against(cocycle)?;
    (0..cocycle.samples())
        .into_par_iter()
        .map(|s| f(&cocycle.map(s, scale)?, &split.bases_at[s]))
        .collect()
}

/// `‖P^ℓ|N^i‖ · ‖P^{-ℓ}|N^j‖` at every sample: block `j` ℓ-dominates block `i`
/// when the worst product is at most `θ`.
pub fn domination_check(
    cocycle: &dyn Cocycle,
    split: &CandidateSplitting,
    i: usize,
    j: usize,
    scale: f64,
    theta: f64,
) -> Result<SplittingReport> {
    split.check_block(i)?;
    split.check_block(j)?;
    if i == j {
        return Err(Error::InvalidParameter("domination needs two distinct blocks".into()));
    }
    check_scale(scale, theta)?;
    let values = per_sample(cocycle, split, scale, |p, blocks| {
        let (fwd_i, _) = restricted_norms(p, &blocks[i])?;
        let (_, bwd_j) = restricted_norms(p, &blocks[j])?;
        Ok(fwd_i * bwd_j)
    })?;
    Ok(SplittingReport::from_values(&values, scale, theta, &split.block_dims))
}

/// Both `‖P^ℓ|N^s‖ ≤ θ` and `‖P^{-ℓ}|N^u‖ ≤ θ` at every sample.
pub fn hyperbolicity_check(
    cocycle: &dyn Cocycle,
    split: &CandidateSplitting,
    stable: usize,
    unstable: usize,
    scale: f64,
    theta: f64,
) -> Result<SplittingReport> {
    split.check_block(stable)?;
    split.check_block(unstable)?;
    if stable == unstable {
        return Err(Error::InvalidParameter("stable and unstable blocks must differ".into()));
    }
    if split.blocks() != 2 {
        return Err(Error::InvalidSplitting("hyperbolicity needs exactly two blocks".into()));
    }
    check_scale(scale, theta)?;
    let contraction = per_sample(cocycle, split, scale, |p, b| Ok(restricted_norms(p, &b[stable])?.0))?;
    let expansion = per_sample(cocycle, split, scale, |p, b| Ok(restricted_norms(p, &b[unstable])?.1))?;
    let parts = vec![
        SplittingReport::from_values(&contraction, scale, theta, &split.block_dims),
        SplittingReport::from_values(&expansion, scale, theta, &split.block_dims),
    ];
    Ok(SplittingReport::aggregate(parts, scale, theta, &split.block_dims))
}

/// Block roles for a partial hyperbolicity test; absent roles are trivial bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockRoles {
    pub unstable: Option<usize>,
    pub center: Option<usize>,
    pub stable: Option<usize>,
}

/// Expansion of `N^u`, contraction of `N^s`, and `N^u ≻ N^c ≻ N^s` domination.
pub fn partial_hyperbolicity_check(
    cocycle: &dyn Cocycle,
    split: &CandidateSplitting,
    roles: BlockRoles,
    scale: f64,
    theta: f64,
) -> Result<SplittingReport> {
    let present: Vec<usize> = [roles.unstable, roles.center, roles.stable].into_iter().flatten().collect();
    for &b in &present {
        split.check_block(b)?;
    }
    if present.len() < 2 {
        return Err(Error::InvalidSplitting("at least two non-trivial blocks required".into()));
    }
    let mut distinct = present.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != present.len() || present.len() != split.blocks() {
        return Err(Error::InvalidSplitting("roles must name every block exactly once".into()));
    }
    check_scale(scale, theta)?;
    let mut parts = Vec::new();
    if let Some(u) = roles.unstable {
        let v = per_sample(cocycle, split, scale, |p, b| Ok(restricted_norms(p, &b[u])?.1))?;
        parts.push(SplittingReport::from_values(&v, scale, theta, &split.block_dims));
    }
    if let Some(s) = roles.stable {
        let v = per_sample(cocycle, split, scale, |p, b| Ok(restricted_norms(p, &b[s])?.0))?;
        parts.push(SplittingReport::from_values(&v, scale, theta, &split.block_dims));
    }
    if let Some(c) = roles.center {
        if let Some(u) = roles.unstable {
            parts.push(domination_check(cocycle, split, c, u, scale, theta)?);
        }
        if let Some(s) = roles.stable {
            parts.push(domination_check(cocycle, split, s, c, scale, theta)?);
        }
    }
    let mut report = SplittingReport::aggregate(parts, scale, theta, &split.block_dims);
    if roles.center.is_none() && report.verdict == Verdict::Holds {
        report.special_case = Some("anosov".into());
    }
    Ok(report)
}

/// Smallest grid scale at which block `j` dominates block `i`.
pub fn min_domination_scale(
    cocycle: &dyn Cocycle,
    split: &CandidateSplitting,
    i: usize,
    j: usize,
    grid: &[f64],
    theta: f64,
) -> Result<Option<f64>> {
    Ok(scan_domination(cocycle, split, i, j, grid, theta)?.first_hold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleScan {
    pub scales: Vec<f64>,
    pub verdicts: Vec<Verdict>,
    pub worst_products: Vec<f64>,
    pub first_hold: Option<f64>,
    /// Once the check holds it keeps holding at every larger grid scale.
    pub monotone: bool,
}

impl ScaleScan {
    /// Holds, fails, or inconclusive when verdicts oscillate along the grid.
    pub fn verdict(&self) -> Verdict {
        match (self.first_hold, self.monotone) {
            (_, false) => Verdict::Inconclusive,
            (Some(_), true) => Verdict::Holds,
            (None, true) => Verdict::Fails,
        }
    }
}

pub fn scan_domination(
    cocycle: &dyn Cocycle,
    split: &CandidateSplitting,
    i: usize,
    j: usize,
    grid: &[f64],
    theta: f64,
) -> Result<ScaleScan> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] <= 0.0 {
        return Err(Error::InvalidParameter("scale grid must be positive and increasing".into()));
    }
    let reports = grid
        .iter()
        .map(|&l| domination_check(cocycle, split, i, j, l, theta))
        .collect::<Result<Vec<_>>>()?;
    let verdicts: Vec<Verdict> = reports.iter().map(|r| r.verdict).collect();
    let first = verdicts.iter().position(|v| *v == Verdict::Holds);
    let monotone = first.map_or(true, |f| verdicts[f..].iter().all(|v| *v == Verdict::Holds));
    Ok(ScaleScan {
        scales: grid.to_vec(),
        worst_products: reports.iter().map(|r| r.worst_product).collect(),
        verdicts,
        first_hold: first.map(|f| grid[f]),
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refinement {
    /// Three blocks `(N^u, N^c, N^s)`; the weaker block of the input split in two.
    #[serde(skip)]
    pub split: CandidateSplitting,
    pub roles: BlockRoles,
    pub scale: Option<f64>,
    pub report: Option<SplittingReport>,
    pub note: String,
}

/// Refines a dominated two-block splitting `N^1 ≻ N^2` of a symplectic
/// cocycle (`dim N^1 ≤ dim N^2`) into `(N^1, N^c, N^s)` with
/// `dim N^s = dim N^1`, taken as the most contracted directions of `N^2`
/// over the splitting horizon, and retests partial hyperbolicity on `grid`.
pub fn refine_dominated(
    cocycle: &dyn Cocycle,
    split: &CandidateSplitting,
    horizon: f64,
    grid: &[f64],
    theta: f64,
) -> Result<Refinement> {
    split.check_against(cocycle)?;
    if split.blocks() != 2 {
        return Err(Error::InvalidSplitting("refinement takes a two-block splitting".into()));
    }
    let (d1, d2) = (split.block_dims[0], split.block_dims[1]);
    if d1 > d2 {
        return Err(Error::InvalidSplitting("the dominating block must not be larger".into()));
    }
    let mut bases_at = Vec::with_capacity(split.bases_at.len());
    for (s, blocks) in split.bases_at.iter().enumerate() {
        let weak = &blocks[1];
        let v = right_vectors(&(cocycle.map(s, horizon)? * weak))?;
        let mut refined = vec![blocks[0].clone()];
        if d2 > d1 {
            refined.push(linalg::orthonormalize(&(weak * v.columns(0, d2 - d1)))?);
        }
        refined.push(linalg::orthonormalize(&(weak * v.columns(d2 - d1, d1)))?);
        bases_at.push(refined);
    }
    let roles = if d2 > d1 {
        BlockRoles { unstable: Some(0), center: Some(1), stable: Some(2) }
    } else {
        BlockRoles { unstable: Some(0), center: None, stable: Some(1) }
    };
    let block_dims = bases_at[0].iter().map(|b| b.ncols()).collect();
    let refined = CandidateSplitting { block_dims, bases_at, rates_at: vec![], horizon };
    let mut found = None;
    for &l in grid {
        let r = partial_hyperbolicity_check(cocycle, &refined, roles, l, theta)?;
        if r.verdict == Verdict::Holds {
            found = Some(r);
            break;
        }
    }
    Ok(Refinement {
        split: refined,
        roles,
        scale: found.as_ref().map(|r| r.scale),
        report: found,
        note: "a dominated splitting of a symplectic cocycle implies partial hyperbolicity; \
               retested with a contracting block of the mirror dimension"
            .into(),
    })
}

/// `count` orbit points of `x0` spaced by `spacing`, with the default integrator.
pub fn orbit_cocycle(sys: &HamiltonianSystem, x0: &PhasePoint, count: usize, spacing: f64) -> Result<OrbitCocycle> {
    OrbitCocycle::along(sys.clone(), x0, count, spacing, StepPolicy::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamsys::Builtin;
    use std::f64::consts::LN_2;

    fn unit(dim: usize, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(dim, idx.len(), |r, c| if r == idx[c] { 1.0 } else { 0.0 })
    }

    /// Linearized saddle-center `q1 p1 + (q2² + p2²)/2`, coordinates `(q1, q2, p1, p2)`.
    fn saddle_center_linear() -> LinearCocycle {
        let mut hess = DMatrix::zeros(4, 4);
        hess[(0, 2)] = 1.0;
        hess[(2, 0)] = 1.0;
        hess[(1, 1)] = 1.0;
        hess[(3, 3)] = 1.0;
        LinearCocycle::new(linalg::symplectic_j(2) * hess, 3).unwrap()
    }

    fn two_rate(strong: f64, weak: f64) -> (LinearCocycle, CandidateSplitting) {
        let c = LinearCocycle::diagonal(&[weak, strong], 2).unwrap();
        let s = CandidateSplitting::constant(vec![unit(2, &[0]), unit(2, &[1])], 2).unwrap();
        (c, s)
    }

    #[test]
    fn domination_closed_form() {
        let (c, s) = two_rate(1.0, 0.0);
        let r = domination_check(&c, &s, 0, 1, LN_2, DEFAULT_THETA).unwrap();
        assert!((r.worst_product - 0.5).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Holds);
        let r = domination_check(&c, &s, 0, 1, LN_2 / 2.0, DEFAULT_THETA).unwrap();
        assert!((r.worst_product - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Fails);
        assert!(r.witness_index.is_some());
    }

    #[test]
    fn identity_never_dominates() {
        let c = LinearCocycle::identity(2, 4).unwrap();
        let s = CandidateSplitting::constant(vec![unit(2, &[0]), unit(2, &[1])], 4).unwrap();
        for l in [0.1, 1.0, 10.0] {
            let r = domination_check(&c, &s, 0, 1, l, DEFAULT_THETA).unwrap();
            assert!((r.worst_product - 1.0).abs() < 1e-12);
            assert_eq!(r.verdict, Verdict::Fails);
        }
        let grid: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
        assert_eq!(min_domination_scale(&c, &s, 0, 1, &grid, DEFAULT_THETA).unwrap(), None);
    }

    #[test]
    fn min_scale_matches_gap() {
        let grid: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
        let first_at_least = |x: f64| grid.iter().copied().find(|&g| g >= x - 1e-12).unwrap();
        let (c, s) = two_rate(1.0, 0.0);
        assert_eq!(min_domination_scale(&c, &s, 0, 1, &grid, DEFAULT_THETA).unwrap(), Some(first_at_least(LN_2)));
        let (c, s) = two_rate(2.0, 0.0);
        assert_eq!(min_domination_scale(&c, &s, 0, 1, &grid, DEFAULT_THETA).unwrap(), Some(first_at_least(LN_2 / 2.0)));
        let scan = scan_domination(&c, &s, 0, 1, &grid, DEFAULT_THETA).unwrap();
        assert!(scan.monotone);
        assert_eq!(scan.verdict(), Verdict::Holds);
    }

    #[test]
    fn hyperbolic_saddle() {
        let c = LinearCocycle::diagonal(&[1.0, -1.0], 2).unwrap();
        let s = CandidateSplitting::constant(vec![unit(2, &[0]), unit(2, &[1])], 2).unwrap();
        let r = hyperbolicity_check(&c, &s, 1, 0, LN_2, DEFAULT_THETA).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        assert!((r.worst_product - 0.5).abs() < 1e-12);

        let rot = LinearCocycle::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), 2).unwrap();
        for l in [0.5, 2.0, 7.0] {
            assert_eq!(hyperbolicity_check(&rot, &s, 1, 0, l, DEFAULT_THETA).unwrap().verdict, Verdict::Fails);
        }
    }

    #[test]
    fn saddle_center_partial() {
        let c = saddle_center_linear();
        let split = estimate_splitting(&c, &SplittingPolicy::default()).unwrap();
        assert_eq!(split.block_dims, vec![1, 2, 1]);
        let expected = [unit(4, &[0]), unit(4, &[1, 3]), unit(4, &[2])];
        for blocks in &split.bases_at {
            for (b, e) in blocks.iter().zip(&expected) {
                assert!(linalg::principal_angle(b, e).unwrap() < 1e-6);
            }
        }
        let longer = estimate_splitting(&c, &SplittingPolicy { horizon: 40.0, ..SplittingPolicy::default() }).unwrap();
        for (a, b) in split.bases_at[0].iter().zip(&longer.bases_at[0]) {
            assert!(linalg::principal_angle(a, b).unwrap() < 1e-3);
        }
        let roles = BlockRoles { unstable: Some(0), center: Some(1), stable: Some(2) };
        let r = partial_hyperbolicity_check(&c, &split, roles, LN_2, DEFAULT_THETA).unwrap();
        assert_eq!(r.verdict, Verdict::Holds, "{r:?}");
        assert_eq!(r.special_case, None);

        // A two-block split whose "stable" half contains center directions.
        let bad = CandidateSplitting::constant(vec![unit(4, &[2, 1]), unit(4, &[0, 3])], 3).unwrap();
        assert_eq!(hyperbolicity_check(&c, &bad, 0, 1, LN_2, DEFAULT_THETA).unwrap().verdict, Verdict::Fails);
    }

    #[test]
    fn anosov_special_case() {
        let c = LinearCocycle::diagonal(&[1.0, -1.0], 1).unwrap();
        let s = CandidateSplitting::constant(vec![unit(2, &[0]), unit(2, &[1])], 1).unwrap();
        let roles = BlockRoles { unstable: Some(0), center: None, stable: Some(1) };
        let r = partial_hyperbolicity_check(&c, &s, roles, LN_2, DEFAULT_THETA).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        assert_eq!(r.special_case.as_deref(), Some("anosov"));
    }

    #[test]
    fn dominated_refines_to_partial() {
        let c = saddle_center_linear();
        let two = CandidateSplitting::constant(vec![unit(4, &[0]), unit(4, &[1, 2, 3])], 3).unwrap();
        assert_eq!(domination_check(&c, &two, 1, 0, LN_2, DEFAULT_THETA).unwrap().verdict, Verdict::Holds);
        let grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
        let refined = refine_dominated(&c, &two, DEFAULT_HORIZON, &grid, DEFAULT_THETA).unwrap();
        assert_eq!(refined.split.block_dims, vec![1, 2, 1]);
        assert!(refined.scale.is_some());
        assert!(linalg::principal_angle(&refined.split.bases_at[0][2], &unit(4, &[2])).unwrap() < 1e-6);
    }

    #[test]
    fn harmonic_has_no_splitting() {
        let sys = Builtin::Harmonic.system();
        let x0 = PhasePoint::from_slice(&[1.0, 0.3, 0.0, 0.4]).unwrap();
        let c = orbit_cocycle(&sys, &x0, 3, 1.0).unwrap();
        assert!(matches!(estimate_splitting(&c, &SplittingPolicy::default()), Err(Error::RankCollapse { .. })));

        // Rotation cocycle of the same oscillator on coordinate planes.
        let rot = LinearCocycle::new(linalg::symplectic_j(2), 2).unwrap();
        let s = CandidateSplitting::constant(vec![unit(4, &[0]), unit(4, &[1, 3]), unit(4, &[2])], 2).unwrap();
        let roles = BlockRoles { unstable: Some(0), center: Some(1), stable: Some(2) };
        assert_eq!(partial_hyperbolicity_check(&rot, &s, roles, LN_2, DEFAULT_THETA).unwrap().verdict, Verdict::Fails);
    }

    #[test]
    fn bad_inputs() {
        let (c, s) = two_rate(1.0, 0.0);
        assert!(domination_check(&c, &s, 0, 0, 1.0, 0.5).is_err());
        assert!(domination_check(&c, &s, 0, 2, 1.0, 0.5).is_err());
        assert!(domination_check(&c, &s, 0, 1, -1.0, 0.5).is_err());
        assert!(CandidateSplitting::constant(vec![unit(2, &[0]), unit(2, &[0])], 1).is_err());
    }
}
