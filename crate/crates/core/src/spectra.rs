//! Transversal Lyapunov spectra from a QR-renormalized frame cocycle.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, StepPolicy};
use crate::hamsys::{HamiltonianSystem, PhasePoint};
use crate::linalg;
use crate::poincare;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumPolicy {
    pub step: StepPolicy,
    /// Time between QR renormalizations.
    pub renorm: f64,
    /// Also accumulate the full `2n` spectrum of the tangent flow.
    pub full: bool,
    /// Interval between progress rows; `None` records only the final row.
    pub progress_every: Option<f64>,
}

impl Default for SpectrumPolicy {
    fn default() -> Self {
        Self { step: StepPolicy::default(), renorm: 1.0, full: false, progress_every: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressRow {
    pub t: f64,
    pub exponents: Vec<f64>,
    pub pairing_defect: f64,
    pub sum_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSpectrum {
    /// Transversal exponents, non-increasing, length `2n − 2`.
    pub exponents: Vec<f64>,
    #[serde(rename = "T")]
    pub t: f64,
    pub renorm_interval: f64,
    pub pairing_defect: f64,
    pub sum_defect: f64,
    /// Exponents of the full tangent flow when requested.
    pub full_exponents: Option<Vec<f64>>,
    pub progress: Vec<ProgressRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub pairing_defect: f64,
    pub sum_defect: f64,
}

/// Pairing: `max_i |λ_i + λ_{k−1−i}|` over the sorted list. Sum: `|Σ λ_i|`.
pub fn diagnostics_of(exponents: &[f64]) -> Diagnostics {
    let mut sorted = exponents.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = sorted.len();
    let pairing = (0..k).map(|i| (sorted[i] + sorted[k - 1 - i]).abs()).fold(0.0, f64::max);
    Diagnostics { pairing_defect: pairing, sum_defect: sorted.iter().sum::<f64>().abs() }
}

pub fn spectrum_diagnostics(spec: &LyapunovSpectrum) -> Diagnostics {
    diagnostics_of(&spec.exponents)
}

/// `Λ_i = λ_1 + … + λ_i`, `1 ≤ i ≤ 2n − 2`.
pub fn volume_growth(spec: &LyapunovSpectrum, i: usize) -> Result<f64> {
    let k = spec.exponents.len();
    if i == 0 || i > k {
        return Err(Error::IndexOutOfRange { index: i, max: k });
    }
    Ok(spec.exponents[..i].iter().sum())
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Removes the components along `X_H(x)` and `grad H(x)`.
fn project(sys: &HamiltonianSystem, x: &PhasePoint, w: &mut DMatrix<f64>, t: f64) -> Result<()> {
    let g = sys.gradient(x)?;
    let gn = g.norm();
    if gn <= crate::hamsys::SINGULAR_TOL {
        return Err(Error::SingularOnOrbit { t });
    }
    let g = g / gn;
    let mut f = vec![0.0; g.len()];
    linalg::apply_j(g.as_slice(), &mut f);
    let f = DVector::from_vec(f);
    for mut col in w.column_iter_mut() {
        let a = f.dot(&col);
        let b = g.dot(&col);
        col.axpy(-a, &f, 1.0);
        col.axpy(-b, &g, 1.0);
    }
    Ok(())
}

pub fn lyapunov_spectrum(
    sys: &HamiltonianSystem,
    x0: &PhasePoint,
    t_total: f64,
    policy: &SpectrumPolicy,
) -> Result<LyapunovSpectrum> {
    if !(t_total > 0.0 && policy.renorm > 0.0) {
        return Err(Error::InvalidParameter("T and renorm must be positive".into()));
    }
    let frame = poincare::transversal_frame(sys, x0)?;
    let k = frame.rank();
    let d = sys.dim();
    let mut q = frame.basis;
    let mut q_full = policy.full.then(|| DMatrix::<f64>::identity(d, d));
    let mut sums = vec![0.0; k];
    let mut sums_full = vec![0.0; d];
    let intervals = (t_total / policy.renorm).ceil().max(1.0) as usize;
    let dt = t_total / intervals as f64;
    let progress_stride = policy.progress_every.map(|p| ((p / dt).round() as usize).max(1));
    let mut progress = Vec::new();
    let mut x = x0.coords().to_vec();

    for step in 1..=intervals {
        let t_now = step as f64 * dt;
        // Transversal frame and (optionally) the full frame ride in one tangent solve.
        let mut w = match &q_full {
            Some(qf) => {
                let mut both = DMatrix::zeros(d, k + d);
                both.columns_mut(0, k).copy_from(&q);
                both.columns_mut(k, d).copy_from(qf);
                both
            }
            None => q.clone(),
        };
        let escaped = |e: Error| match e {
            Error::SingularStart { .. } => Error::SingularOnOrbit { t: t_now - dt },
            other => other,
        };
        flow::advance(sys, &mut x, dt, &policy.step, Some(&mut w), |_, _| {}).map_err(escaped)?;
        let xp = PhasePoint::from_slice(&x).map_err(|_| Error::OrbitEscaped { t: t_now })?;
        let mut wt = w.columns(0, k).into_owned();
        project(sys, &xp, &mut wt, t_now)?;
        let (qn, r) = linalg::qr_positive(&wt);
        for (s, v) in sums.iter_mut().zip(&r) {
            *s += v.ln();
        }
        q = qn;
        if let Some(qf) = q_full.as_mut() {
            let (qfn, rf) = linalg::qr_positive(&w.columns(k, d).into_owned());
            for (s, v) in sums_full.iter_mut().zip(&rf) {
                *s += v.ln();
            }
            *qf = qfn;
        }
        let at_row = progress_stride.is_some_and(|p| step % p == 0) || step == intervals;
        if at_row {
            let ex = sorted_desc(&sums.iter().map(|s| s / t_now).collect::<Vec<_>>());
            let dg = diagnostics_of(&ex);
            progress.push(ProgressRow { t: t_now, exponents: ex, pairing_defect: dg.pairing_defect, sum_defect: dg.sum_defect });
        }
    }
    let exponents = sorted_desc(&sums.iter().map(|s| s / t_total).collect::<Vec<_>>());
    let dg = diagnostics_of(&exponents);
    let full_exponents = policy.full.then(|| sorted_desc(&sums_full.iter().map(|s| s / t_total).collect::<Vec<_>>()));
    Ok(LyapunovSpectrum {
        exponents,
        t: t_total,
        renorm_interval: dt,
        pairing_defect: dg.pairing_defect,
        sum_defect: dg.sum_defect,
        full_exponents,
        progress,
    })
}

impl LyapunovSpectrum {
    /// Writes `T,lambda_1..lambda_k,pairing_defect,sum_defect` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let k = self.exponents.len();
        let mut header = vec!["T".to_string()];
        header.extend((1..=k).map(|i| format!("lambda_{i}")));
        header.push("pairing_defect".into());
        header.push("sum_defect".into());
        writeln!(out, "{}", header.join(","))?;
        for row in &self.progress {
            let mut cells = vec![format!("{:.17e}", row.t)];
            cells.extend(row.exponents.iter().map(|v| format!("{v:.17e}")));
            cells.push(format!("{:.17e}", row.pairing_defect));
            cells.push(format!("{:.17e}", row.sum_defect));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
