//! Subcommand implementations. Each command merges its flags with the config
//! file and defaults, runs one analysis, and writes a report that embeds the
//! effective configuration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hamshade::acceptance::{self, SelftestConfig};
use hamshade::flow::{self, Method, StepPolicy};
use hamshade::hamsys::{self, Builtin, HamiltonianSystem, PhasePoint, SuspensionState, SuspensionSystem, SystemDef};
use hamshade::orbits::{self, OrbitSearch};
use hamshade::poincare::Section;
use hamshade::shades::{self, OrbitArc, ProbeOptions, ProbeVerdict, PseudoOrbitFile, SearchOptions};
use hamshade::spectra::{self, SpectrumPolicy};
use hamshade::splitting::{self, OrbitCocycle, SplittingPolicy, Verdict};

use crate::config::{self, ConfigFile, SystemSpec};
use crate::output;
use crate::SharedFlags;

pub struct Outcome {
    /// Verdict holds / search succeeded.
    pub ok: bool,
    pub summary: String,
}

pub struct Context {
    file: ConfigFile,
    system: Option<SystemSpec>,
    output_dir: PathBuf,
    jobs: Option<usize>,
}

#[derive(Serialize)]
struct Effective<'a, P: Serialize> {
    system: Option<&'a SystemDef>,
    output_dir: &'a Path,
    jobs: Option<usize>,
    params: &'a P,
}

impl Context {
    pub fn new(flags: &SharedFlags) -> anyhow::Result<Self> {
        let file = ConfigFile::load(flags.config.as_deref())?;
        let jobs = config::resolve_jobs(flags.jobs, &file)?;
        if let Some(j) = jobs {
            if j == 0 {
                bail!("jobs must be positive");
            }
            rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("starting worker pool")?;
        }
        Ok(Self {
            system: config::resolve_system(flags.system.as_deref(), &file)?,
            output_dir: config::resolve_output_dir(flags.output_dir.as_deref(), &file)?,
            jobs,
            file,
        })
    }

    fn params<P: Serialize + DeserializeOwned + Default, F: Serialize>(&self, command: &str, flags: &F) -> anyhow::Result<P> {
        config::merge(flags, self.file.section(command))
    }

    fn system(&self) -> anyhow::Result<(HamiltonianSystem, SystemDef)> {
        let spec = self.system.as_ref().ok_or_else(|| anyhow!("no system given; use --system or the config key \"system\""))?;
        config::load_system(spec)
    }

    fn report<P: Serialize, R: Serialize>(&self, command: &str, def: Option<&SystemDef>, params: &P, result: &R) -> anyhow::Result<PathBuf> {
        let eff = Effective { system: def, output_dir: &self.output_dir, jobs: self.jobs, params };
        output::write_report(&self.output_dir, command, &eff, result)
    }
}

fn point(v: &[f64]) -> anyhow::Result<PhasePoint> {
    Ok(PhasePoint::from_slice(v)?)
}

/// Bounded, regular starting points for the builtin systems.
fn default_point(def: &SystemDef) -> Option<Vec<f64>> {
    let b: Builtin = def.builtin.as_deref()?.parse().ok()?;
    Some(match b {
        Builtin::Pedro => vec![0.1, 0.05],
        Builtin::Harmonic => vec![1.0, 0.2, 0.0, 0.5],
        Builtin::HenonHeiles => acceptance::henon_heiles_seed(0.1, 0.125).ok()?.into_vec(),
        Builtin::SaddleCenter => vec![0.0, 0.5, 0.0, 0.0],
    })
}

fn start_point(given: &mut Option<Vec<f64>>, def: &SystemDef) -> anyhow::Result<PhasePoint> {
    if given.is_none() {
        *given = default_point(def);
    }
    let v = given.as_ref().ok_or_else(|| anyhow!("this system has no default point; pass --x0"))?;
    point(v)
}

fn step_policy(step: f64, method: &str, bound: Option<f64>) -> anyhow::Result<StepPolicy> {
    let mut p = StepPolicy::with_step(step).method(method.parse::<Method>()?);
    p.bound = bound;
    Ok(p)
}

// ---------------------------------------------------------------------------
// describe

#[derive(clap::Args, Serialize)]
pub struct DescribeFlags {
    /// Point `q1,..,qn,p1,..,pn` to evaluate.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DescribeParams {
    x: Option<Vec<f64>>,
    singular_tol: f64,
}

#[derive(Serialize)]
struct Evaluation {
    x: PhasePoint,
    energy: f64,
    gradient: Vec<f64>,
    field: Vec<f64>,
    regular: bool,
}

#[derive(Serialize)]
struct Description {
    name: String,
    dof: usize,
    dim: usize,
    separable: bool,
    builtins: Vec<&'static str>,
    evaluation: Option<Evaluation>,
}

pub fn describe(ctx: &Context, flags: &DescribeFlags) -> anyhow::Result<Outcome> {
    let mut p: DescribeParams = ctx.params("describe", flags)?;
    if p.singular_tol == 0.0 {
        p.singular_tol = hamsys::SINGULAR_TOL;
    }
    let (sys, def) = ctx.system()?;
    let evaluation = match &p.x {
        None => None,
        Some(v) => {
            let x = point(v)?;
            Some(Evaluation {
                energy: sys.eval_h(&x)?,
                gradient: sys.gradient(&x)?.as_slice().to_vec(),
                field: sys.hamiltonian_field(&x)?.as_slice().to_vec(),
                regular: sys.is_regular(&x, p.singular_tol),
                x,
            })
        }
    };
    let d = Description {
        name: sys.name().into(),
        dof: sys.dof(),
        dim: sys.dim(),
        separable: sys.is_separable(),
        builtins: Builtin::ALL.iter().map(|b| b.name()).collect(),
        evaluation,
    };
    let path = ctx.report("describe", Some(&def), &p, &d)?;
    Ok(Outcome { ok: true, summary: format!("describe: {} (n = {}) -> {}", d.name, d.dof, path.display()) })
}

// ---------------------------------------------------------------------------
// flow

#[derive(clap::Args, Serialize)]
pub struct FlowFlags {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Integration time (may be negative).
    #[arg(long = "T", allow_hyphen_values = true)]
    #[serde(rename = "T")]
    t: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// implicit-midpoint, leapfrog or rk4.
    #[arg(long)]
    method: Option<String>,
    /// Record every k-th step.
    #[arg(long)]
    every: Option<usize>,
    /// Abort when |x| exceeds this bound.
    #[arg(long)]
    bound: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowParams {
    x0: Option<Vec<f64>>,
    #[serde(rename = "T")]
    t: f64,
    step: f64,
    method: String,
    every: usize,
    bound: Option<f64>,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { x0: None, t: 10.0, step: flow::DEFAULT_STEP, method: Method::ImplicitMidpoint.name().into(), every: 10, bound: None }
    }
}

#[derive(Serialize)]
struct FlowResult {
    final_point: PhasePoint,
    energy_drift: f64,
    samples: usize,
    csv: String,
}

pub fn flow(ctx: &Context, flags: &FlowFlags) -> anyhow::Result<Outcome> {
    let mut p: FlowParams = ctx.params("flow", flags)?;
    let (sys, def) = ctx.system()?;
    let x0 = start_point(&mut p.x0, &def)?;
    let policy = step_policy(p.step, &p.method, p.bound)?;
    policy.validate(&sys)?;
    let traj = flow::integrate_every(&sys, &x0, p.t, &policy, p.every)?;
    let csv = output::write_csv(&ctx.output_dir, "flow.csv", |buf| traj.write_csv(&sys, buf))?;
    let r = FlowResult {
        final_point: traj.last().clone(),
        energy_drift: traj.energy_drift,
        samples: traj.points.len(),
        csv: file_name(&csv),
    };
    let path = ctx.report("flow", Some(&def), &p, &r)?;
    Ok(Outcome { ok: true, summary: format!("flow: energy drift {:.3e} -> {}", r.energy_drift, path.display()) })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// lyap

#[derive(clap::Args, Serialize)]
pub struct LyapFlags {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Time between QR renormalizations.
    #[arg(long)]
    renorm: Option<f64>,
    /// Also report the full tangent-flow spectrum.
    #[arg(long)]
    full: Option<bool>,
    /// Time between CSV progress rows [default: T/100].
    #[arg(long)]
    progress_every: Option<f64>,
    #[arg(long)]
    bound: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapParams {
    x0: Option<Vec<f64>>,
    #[serde(rename = "T")]
    t: f64,
    step: f64,
    renorm: f64,
    full: bool,
    progress_every: Option<f64>,
    bound: Option<f64>,
}

impl Default for LyapParams {
    fn default() -> Self {
        Self { x0: None, t: 1e3, step: flow::DEFAULT_STEP, renorm: 1.0, full: false, progress_every: None, bound: None }
    }
}

#[derive(Serialize)]
struct LyapResult<'a> {
    #[serde(flatten)]
    spectrum: &'a spectra::LyapunovSpectrum,
    volume_growth: Vec<f64>,
    csv: String,
}

pub fn lyap(ctx: &Context, flags: &LyapFlags) -> anyhow::Result<Outcome> {
    let mut p: LyapParams = ctx.params("lyap", flags)?;
    let (sys, def) = ctx.system()?;
    let x0 = start_point(&mut p.x0, &def)?;
    if !(p.t > 0.0) {
        bail!("T must be positive");
    }
    let every = *p.progress_every.get_or_insert(p.t / 100.0);
    let mut step = StepPolicy::with_step(p.step);
    step.bound = p.bound;
    let policy = SpectrumPolicy { step, renorm: p.renorm, full: p.full, progress_every: Some(every) };
    let spec = spectra::lyapunov_spectrum(&sys, &x0, p.t, &policy)?;
    let csv = output::write_csv(&ctx.output_dir, "lyap.csv", |buf| spec.write_csv(buf))?;
    let volume_growth = (1..=spec.exponents.len()).map(|i| spectra::volume_growth(&spec, i)).collect::<hamshade::Result<_>>()?;
    let r = LyapResult { spectrum: &spec, volume_growth, csv: file_name(&csv) };
    let path = ctx.report("lyap", Some(&def), &p, &r)?;
    let shown: Vec<String> = spec.exponents.iter().map(|l| format!("{l:.3e}")).collect();
    Ok(Outcome {
        ok: true,
        summary: format!(
            "lyap: exponents [{}] pairing {:.1e} sum {:.1e} -> {}",
            shown.join(", "),
            spec.pairing_defect,
            spec.sum_defect,
            path.display()
        ),
    })
}

// ---------------------------------------------------------------------------
// orbit

#[derive(clap::Args, Serialize)]
pub struct OrbitFlags {
    /// Initial guess; otherwise drawn from --seed.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Seed for a random initial guess.
    #[arg(long)]
    seed: Option<u64>,
    /// Move the guess onto this energy level first.
    #[arg(long, allow_hyphen_values = true)]
    energy: Option<f64>,
    /// Section `x[section_coord] = section_value`.
    #[arg(long)]
    section_coord: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    section_value: Option<f64>,
    /// +1 or -1: crossing direction.
    #[arg(long, allow_hyphen_values = true)]
    direction: Option<i8>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_newton: Option<usize>,
    #[arg(long)]
    return_budget: Option<f64>,
    #[arg(long)]
    unit_band: Option<f64>,
    /// Guess coordinates are drawn from [-spread, spread].
    #[arg(long)]
    spread: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitParams {
    x0: Option<Vec<f64>>,
    seed: u64,
    energy: Option<f64>,
    section_coord: usize,
    section_value: f64,
    direction: i8,
    step: f64,
    tol: f64,
    max_newton: usize,
    return_budget: f64,
    unit_band: f64,
    spread: f64,
}

impl Default for OrbitParams {
    fn default() -> Self {
        let s = OrbitSearch::default();
        Self {
            x0: None,
            seed: 0,
            energy: None,
            section_coord: 0,
            section_value: 0.0,
            direction: 1,
            step: 1e-4,
            tol: s.tol,
            max_newton: s.max_newton,
            return_budget: s.return_budget,
            unit_band: s.unit_band,
            spread: 0.3,
        }
    }
}

#[derive(Serialize)]
struct OrbitResult {
    guess: PhasePoint,
    #[serde(flatten)]
    report: orbits::OrbitReport,
}

pub fn orbit(ctx: &Context, flags: &OrbitFlags) -> anyhow::Result<Outcome> {
    let p: OrbitParams = ctx.params("orbit", flags)?;
    let (sys, def) = ctx.system()?;
    let d = sys.dim();
    if p.section_coord >= d {
        bail!("section_coord {} out of range for dimension {d}", p.section_coord);
    }
    let mut guess = match &p.x0 {
        Some(v) => v.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            (0..d).map(|_| rng.gen_range(-p.spread..=p.spread)).collect()
        }
    };
    guess[p.section_coord] = p.section_value;
    if let Some(e) = p.energy {
        sys.move_to_level(&mut guess, e)?;
    }
    let guess = point(&guess)?;
    let section = Section::coordinate(d, p.section_coord, p.section_value, p.direction);
    let search = OrbitSearch {
        max_newton: p.max_newton,
        tol: p.tol,
        step: StepPolicy::with_step(p.step),
        return_budget: p.return_budget,
        unit_band: p.unit_band,
    };
    let orbit = orbits::find_periodic(&sys, &guess, &section, &search)?;
    let r = OrbitResult { guess, report: orbit.report()? };
    let path = ctx.report("orbit", Some(&def), &p, &r)?;
    Ok(Outcome {
        ok: true,
        summary: format!("orbit: period {:.6} {} residual {:.1e} -> {}", r.report.period, r.report.classification, r.report.residual, path.display()),
    })
}

// ---------------------------------------------------------------------------
// splitting

#[derive(clap::Args, Serialize)]
pub struct SplittingFlags {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Number of orbit samples.
    #[arg(long)]
    count: Option<usize>,
    /// Flow time between samples.
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Time over which growth rates are estimated.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Explicit block dimensions, e.g. 1,2,1.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Norm-product threshold.
    #[arg(long)]
    theta: Option<f64>,
    /// Scale grid `start,stop,step`.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplittingParams {
    x0: Option<Vec<f64>>,
    count: usize,
    spacing: f64,
    step: f64,
    horizon: f64,
    gap_tol: f64,
    dims: Option<Vec<usize>>,
    theta: f64,
    scales: Vec<f64>,
}

impl Default for SplittingParams {
    fn default() -> Self {
        let s = SplittingPolicy::default();
        Self {
            x0: None,
            count: 4,
            spacing: 1.0,
            step: flow::DEFAULT_STEP,
            horizon: s.horizon,
            gap_tol: s.gap_tol,
            dims: None,
            theta: splitting::DEFAULT_THETA,
            scales: vec![0.1, 5.0, 0.1],
        }
    }
}

#[derive(Serialize)]
struct NeighbourScan {
    dominating: usize,
    dominated: usize,
    verdict: Verdict,
    #[serde(flatten)]
    scan: splitting::ScaleScan,
}

#[derive(Serialize)]
struct SplittingResult {
    verdict: Verdict,
    estimate: Option<splitting::CandidateSplitting>,
    neighbours: Vec<NeighbourScan>,
    note: Option<String>,
}

fn scale_grid(spec: &[f64]) -> anyhow::Result<Vec<f64>> {
    let [start, stop, step] = spec else { bail!("scales must be start,stop,step") };
    if !(*start > 0.0 && stop >= start && *step > 0.0) {
        bail!("scales need 0 < start <= stop and step > 0");
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

pub fn splitting(ctx: &Context, flags: &SplittingFlags) -> anyhow::Result<Outcome> {
    let mut p: SplittingParams = ctx.params("splitting", flags)?;
    let (sys, def) = ctx.system()?;
    let x0 = start_point(&mut p.x0, &def)?;
    let grid = scale_grid(&p.scales)?;
    let cocycle = OrbitCocycle::along(sys, &x0, p.count, p.spacing, StepPolicy::with_step(p.step))?;
    let policy = SplittingPolicy { horizon: p.horizon, gap_tol: p.gap_tol, dims: p.dims.clone() };
    let result = match splitting::estimate_splitting(&cocycle, &policy) {
        Err(hamshade::Error::RankCollapse { gap }) => SplittingResult {
            verdict: Verdict::Fails,
            estimate: None,
            neighbours: vec![],
            note: Some(format!("growth rates do not separate (gap {gap:.3e}); no splitting to test")),
        },
        Err(e) => return Err(e.into()),
        Ok(split) => {
            let neighbours = (0..split.block_dims.len().saturating_sub(1))
                .map(|b| {
                    let scan = splitting::scan_domination(&cocycle, &split, b + 1, b, &grid, p.theta)?;
                    Ok(NeighbourScan { dominating: b, dominated: b + 1, verdict: scan.verdict(), scan })
                })
                .collect::<hamshade::Result<Vec<_>>>()?;
            let verdict = if neighbours.is_empty() {
                Verdict::Inconclusive
            } else if neighbours.iter().all(|n| n.verdict == Verdict::Holds) {
                Verdict::Holds
            } else if neighbours.iter().any(|n| n.verdict == Verdict::Fails) {
                Verdict::Fails
            } else {
                Verdict::Inconclusive
            };
            SplittingResult { verdict, estimate: Some(split), neighbours, note: None }
        }
    };
    let path = ctx.report("splitting", Some(&def), &p, &result)?;
    let dims = result.estimate.as_ref().map(|s| format!("{:?}", s.block_dims)).unwrap_or_else(|| "none".into());
    Ok(Outcome {
        ok: result.verdict == Verdict::Holds,
        summary: format!("splitting: blocks {dims} domination {:?} -> {}", result.verdict, path.display()),
    })
}

// ---------------------------------------------------------------------------
// shadow / weakshadow

#[derive(clap::Args, Serialize)]
pub struct ShadowFlags {
    /// Pseudo-orbit document.
    #[arg(long)]
    pseudo: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    /// Maximal objective evaluations.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    samples_per_segment: Option<usize>,
    /// Reparametrization class [default: eps].
    #[arg(long)]
    rep_eps: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    min_step_ratio: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShadowParams {
    pseudo: Option<PathBuf>,
    eps: f64,
    budget: usize,
    samples_per_segment: usize,
    rep_eps: Option<f64>,
    step: f64,
    min_step_ratio: f64,
}

impl Default for ShadowParams {
    fn default() -> Self {
        let o = SearchOptions::default();
        Self {
            pseudo: None,
            eps: 0.05,
            budget: o.budget,
            samples_per_segment: o.samples_per_segment,
            rep_eps: None,
            step: o.step.step,
            min_step_ratio: o.min_step_ratio,
        }
    }
}

#[derive(Serialize)]
struct ShadowResult {
    delta: f64,
    #[serde(rename = "T")]
    min_time: f64,
    jump_errors: Vec<f64>,
    #[serde(flatten)]
    report: shades::ShadowReport,
}

pub fn shadow(ctx: &Context, flags: &ShadowFlags, weak: bool) -> anyhow::Result<Outcome> {
    let command = if weak { "weakshadow" } else { "shadow" };
    let p: ShadowParams = ctx.params(command, flags)?;
    let (sys, def) = ctx.system()?;
    let path = p.pseudo.as_ref().ok_or_else(|| anyhow!("no pseudo-orbit given; use --pseudo"))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: PseudoOrbitFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let opts = SearchOptions {
        budget: p.budget,
        samples_per_segment: p.samples_per_segment,
        rep_eps: p.rep_eps,
        step: StepPolicy::with_step(p.step),
        min_step_ratio: p.min_step_ratio,
    };
    let po = doc.build(&sys, &opts.step)?;
    let report = if weak { shades::weak_shadow_search(&sys, &po, p.eps, &opts)? } else { shades::shadow_search(&sys, &po, p.eps, &opts)? };
    let r = ShadowResult { delta: po.delta, min_time: po.min_time, jump_errors: po.jump_errors.clone(), report };
    let out = ctx.report(command, Some(&def), &p, &r)?;
    Ok(Outcome {
        ok: r.report.success,
        summary: format!(
            "{command}: {} (best {:.3e} vs eps {:.3e}, {} of {} evaluations) -> {}",
            if r.report.success { "shadowed" } else { "not found within budget" },
            r.report.achieved_eps,
            p.eps,
            r.report.budget_spent,
            p.budget,
            out.display()
        ),
    })
}

// ---------------------------------------------------------------------------
// expansive

#[derive(clap::Args, Serialize)]
pub struct ExpansiveFlags {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    /// Half-width of the time window.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    offset_ratio: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_speedup: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpansiveParams {
    x: Option<Vec<f64>>,
    delta: f64,
    window: f64,
    eps: f64,
    offset_ratio: f64,
    dt: f64,
    step: f64,
    max_speedup: f64,
}

impl Default for ExpansiveParams {
    fn default() -> Self {
        let o = ProbeOptions::default();
        Self {
            x: None,
            delta: 0.1,
            window: 5.0,
            eps: 0.1,
            offset_ratio: o.offset_ratio,
            dt: o.dt,
            step: o.step.step,
            max_speedup: o.max_speedup,
        }
    }
}

pub fn expansive(ctx: &Context, flags: &ExpansiveFlags) -> anyhow::Result<Outcome> {
    let mut p: ExpansiveParams = ctx.params("expansive", flags)?;
    let (sys, def) = ctx.system()?;
    let x = start_point(&mut p.x, &def)?;
    let opts = ProbeOptions { offset_ratio: p.offset_ratio, dt: p.dt, step: StepPolicy::with_step(p.step), max_speedup: p.max_speedup };
    let r = shades::expansiveness_probe(&sys, &x, p.delta, p.window, p.eps, &opts)?;
    let path = ctx.report("expansive", Some(&def), &p, &r)?;
    let (ok, verdict) = match &r.verdict {
        ProbeVerdict::Separated { exit_time } => (true, format!("separated (latest exit at t = {exit_time:.3})")),
        ProbeVerdict::NonExpansiveWitness { orbit_gap, .. } => (false, format!("non-expansive witness (orbit gap {orbit_gap:.3e})")),
        ProbeVerdict::Inconclusive { reason } => (false, format!("inconclusive: {reason}")),
    };
    Ok(Outcome { ok, summary: format!("expansive: {verdict} -> {}", path.display()) })
}

// ---------------------------------------------------------------------------
// spec

#[derive(clap::Args, Serialize)]
pub struct SpecFlags {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    arc1_point: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    arc1_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    arc1_end: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    arc2_point: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    arc2_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    arc2_end: Option<f64>,
    /// Required spacing between the arcs.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    k: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    samples_per_segment: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecParams {
    arc1_point: Option<Vec<f64>>,
    arc1_start: f64,
    arc1_end: f64,
    arc2_point: Option<Vec<f64>>,
    arc2_start: f64,
    arc2_end: f64,
    #[serde(rename = "K")]
    k: f64,
    eps: f64,
    budget: usize,
    samples_per_segment: usize,
    step: f64,
}

impl Default for SpecParams {
    fn default() -> Self {
        let o = SearchOptions::default();
        Self {
            arc1_point: None,
            arc1_start: 0.0,
            arc1_end: 1.0,
            arc2_point: None,
            arc2_start: 6.0,
            arc2_end: 7.0,
            k: 5.0,
            eps: 0.01,
            budget: o.budget,
            samples_per_segment: o.samples_per_segment,
            step: o.step.step,
        }
    }
}

pub fn spec(ctx: &Context, flags: &SpecFlags) -> anyhow::Result<Outcome> {
    let p: SpecParams = ctx.params("spec", flags)?;
    let (sys, def) = ctx.system()?;
    let need = |v: &Option<Vec<f64>>, name: &str| -> anyhow::Result<PhasePoint> {
        point(v.as_ref().ok_or_else(|| anyhow!("missing --{name}"))?)
    };
    let a1 = OrbitArc { point: need(&p.arc1_point, "arc1-point")?, start: p.arc1_start, end: p.arc1_end };
    let a2 = OrbitArc { point: need(&p.arc2_point, "arc2-point")?, start: p.arc2_start, end: p.arc2_end };
    let opts = SearchOptions { budget: p.budget, samples_per_segment: p.samples_per_segment, step: StepPolicy::with_step(p.step), ..SearchOptions::default() };
    let r = shades::weak_spec_check(&sys, &a1, &a2, p.k, p.eps, &opts)?;
    let path = ctx.report("spec", Some(&def), &p, &r)?;
    Ok(Outcome {
        ok: r.success,
        summary: format!(
            "spec: {} (best {:.3e} vs eps {:.3e}) -> {}",
            if r.success { "jointly shadowed" } else { "not found within budget" },
            r.achieved_eps,
            p.eps,
            path.display()
        ),
    })
}

// ---------------------------------------------------------------------------
// suspend

#[derive(clap::Args, Serialize)]
pub struct SuspendFlags {
    /// Constant ceiling.
    #[arg(long)]
    height: Option<f64>,
    /// Base point and roof coordinate `x,y,r`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state: Option<Vec<f64>>,
    /// Flow time (may be negative).
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
    /// Random lower-slab states for the witness.
    #[arg(long)]
    slab_states: Option<usize>,
    /// Integer times checked per state.
    #[arg(long)]
    slab_times: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuspendParams {
    height: f64,
    state: Vec<f64>,
    s: f64,
    slab_states: usize,
    slab_times: usize,
    seed: u64,
}

impl Default for SuspendParams {
    fn default() -> Self {
        Self { height: 1.0, state: vec![0.1, 0.2, 0.0], s: 3.25, slab_states: 50, slab_times: 20, seed: 0 }
    }
}

#[derive(Serialize)]
struct SuspendResult {
    image: [f64; 3],
    slab_witness: Option<hamsys::SlabWitness>,
    slab_note: Option<String>,
}

pub fn suspend(ctx: &Context, flags: &SuspendFlags) -> anyhow::Result<Outcome> {
    let p: SuspendParams = ctx.params("suspend", flags)?;
    let [x, y, r] = p.state[..] else { bail!("state must be x,y,r") };
    let susp = SuspensionSystem::cat_map_constant(p.height)?;
    let img = susp.flow(&SuspensionState { base: [x.rem_euclid(1.0), y.rem_euclid(1.0)], r }, p.s)?;
    // Integer-time slab invariance is specific to the unit ceiling.
    let (slab_witness, slab_note) = if p.height == 1.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let states: Vec<_> = (0..p.slab_states)
            .map(|_| SuspensionState { base: [rng.gen::<f64>(), rng.gen::<f64>()], r: 0.5 * rng.gen_range(0.01..0.99) })
            .collect();
        (Some(hamsys::slab_witness(&susp, &states, p.slab_times)?), None)
    } else {
        (None, Some("slab witness applies to the unit ceiling only".to_string()))
    };
    let result = SuspendResult { image: [img.base[0], img.base[1], img.r], slab_witness, slab_note };
    let path = ctx.report("suspend", None, &p, &result)?;
    let ok = result.slab_witness.as_ref().map_or(true, |w| w.holds());
    Ok(Outcome {
        ok,
        summary: format!(
            "suspend: image ({:.6}, {:.6}, {:.6}){} -> {}",
            result.image[0],
            result.image[1],
            result.image[2],
            match &result.slab_witness {
                Some(w) => format!(", slab witness {} ({} images)", if w.holds() { "holds" } else { "fails" }, w.images_checked),
                None => String::new(),
            },
            path.display()
        ),
    })
}

// ---------------------------------------------------------------------------
// selftest

#[derive(clap::Args, Serialize)]
pub struct SelftestFlags {
    /// Debug aid: scale the bounds of one criterion, `ID=SCALE` (repeatable).
    #[arg(long, value_parser = parse_perturb)]
    #[serde(skip)]
    perturb: Vec<(u8, f64)>,
    /// Run only these criteria.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    only: Vec<u8>,
}

fn parse_perturb(s: &str) -> Result<(u8, f64), String> {
    let (id, scale) = s.split_once('=').ok_or("expected ID=SCALE")?;
    let id: u8 = id.trim().parse().map_err(|e| format!("criterion id: {e}"))?;
    let scale: f64 = scale.trim().parse().map_err(|e| format!("scale: {e}"))?;
    if acceptance::criterion_name(id).is_none() {
        return Err(format!("no criterion {id}"));
    }
    Ok((id, scale))
}

pub fn selftest(ctx: &Context, flags: &SelftestFlags) -> anyhow::Result<Outcome> {
    let mut cfg: SelftestConfig = match ctx.file.section("selftest") {
        Some(v) => serde_json::from_value(v.clone()).context("invalid selftest section")?,
        None => SelftestConfig::default(),
    };
    cfg.perturb.extend(flags.perturb.iter().copied());
    if !flags.only.is_empty() {
        cfg.only = flags.only.clone();
    }
    for id in &cfg.only {
        if acceptance::criterion_name(*id).is_none() {
            bail!("no criterion {id}");
        }
    }
    let report = acceptance::run_selftest(&cfg)?;
    let path = output::write_report(
        &ctx.output_dir,
        "selftest",
        &Effective { system: None, output_dir: &ctx.output_dir, jobs: ctx.jobs, params: &cfg },
        &report,
    )?;
    for c in &report.criteria {
        println!("{}", c.summary());
    }
    let failed: Vec<String> = report.criteria.iter().filter(|c| !c.passed).map(|c| format!("{} ({})", c.id, c.name)).collect();
    Ok(Outcome {
        ok: report.passed,
        summary: if failed.is_empty() {
            format!("selftest: all {} criteria passed -> {}", report.criteria.len(), path.display())
        } else {
            format!("selftest: failed {} -> {}", failed.join(", "), path.display())
        },
    })
}
