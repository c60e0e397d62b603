//! Pearson correlation of residuals over a trailing window.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::detrend::ResidualSeries;
use crate::error::{Error, Result};
use crate::ingest::is_missing;

/// Centered sum of squares at or below `(ZERO_VARIANCE_REL * max|x|)^2 * n`
/// counts as a constant window.
const ZERO_VARIANCE_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Missing,
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excluded {
    pub sensor: String,
    pub reason: ExclusionReason,
}

/// Symmetric correlation matrix with zero diagonal over the included sensors.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
    sensors: Vec<String>,
    positions: Vec<usize>,
    t_end: usize,
    tau_corr: usize,
    excluded: Vec<Excluded>,
}

impl CorrelationMatrix {
    /// Wrap a precomputed matrix, checking the correlation invariants.
    pub fn from_matrix(matrix: DMatrix<f64>, sensors: Vec<String>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || sensors.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{}x{} matrix with {} sensor ids",
                n,
                matrix.ncols(),
                sensors.len()
            )));
        }
        for i in 0..n {
            if matrix[(i, i)] != 0.0 {
                return Err(Error::InvalidParameter(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let v = matrix[(i, j)];
                if v != matrix[(j, i)] {
                    return Err(Error::InvalidParameter(format!("asymmetric at ({i}, {j})")));
                }
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({i}, {j}) = {v} outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(Self {
            matrix,
            positions: (0..n).collect(),
            sensors,
            t_end: 0,
            tau_corr: 0,
            excluded: Vec::new(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ids of the included sensors, in matrix order.
    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    /// Position of each matrix row in the residual list it was built from.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn t_end(&self) -> usize {
        self.t_end
    }

    pub fn tau_corr(&self) -> usize {
        self.tau_corr
    }

    pub fn excluded(&self) -> &[Excluded] {
        &self.excluded
    }

    /// Dense CSV dump with sensor ids as header row and first column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut row: Vec<String> = Vec::with_capacity(self.n() + 1);
        row.push(String::new());
        row.extend(self.sensors.iter().cloned());
        writer
            .write_record(&row)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for i in 0..self.n() {
            row.clear();
            row.push(self.sensors[i].clone());
            row.extend((0..self.n()).map(|j| self.matrix[(i, j)].to_string()));
            writer
                .write_record(&row)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Returns the centered window scaled to unit norm, or `None` if constant.
fn standardize(window: &[f64]) -> Option<Vec<f64>> {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let max_abs = window.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let centered: Vec<f64> = window.iter().map(|v| v - mean).collect();
    let ss: f64 = centered.iter().map(|v| v * v).sum();
    let floor = ZERO_VARIANCE_REL * max_abs;
    if ss == 0.0 || ss <= floor * floor * n {
        return None;
    }
    let norm = ss.sqrt();
    Some(centered.into_iter().map(|v| v / norm).collect())
}

/// Pearson correlation of two equal-length windows, clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "window lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter(
            "windows need at least 2 points".into(),
        ));
    }
    let za = standardize(a).ok_or(Error::ZeroVariance)?;
    let zb = standardize(b).ok_or(Error::ZeroVariance)?;
    let r: f64 = za.iter().zip(&zb).map(|(x, y)| x * y).sum();
    Ok(r.clamp(-1.0, 1.0))
}

/// Correlation matrix of residuals over steps `t_end - tau_corr + 1 ..= t_end`.
///
/// Sensors whose window holds a missing residual or has zero variance are
/// dropped and listed in [`CorrelationMatrix::excluded`].
pub fn correlation_matrix(
    residuals: &[ResidualSeries],
    t_end: usize,
    tau_corr: usize,
) -> Result<CorrelationMatrix> {
    if tau_corr < 3 {
        return Err(Error::InvalidParameter(format!(
            "tau_corr must be >= 3, got {tau_corr}"
        )));
    }
    let start = (t_end + 1).checked_sub(tau_corr).ok_or_else(|| {
        Error::Range(format!(
            "correlation window of {tau_corr} ending at {t_end}"
        ))
    })?;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(residuals.len());
    let mut sensors = Vec::new();
    let mut positions = Vec::new();
    let mut excluded = Vec::new();
    for (i, series) in residuals.iter().enumerate() {
        let window = series.slice(start, t_end).ok_or_else(|| {
            let (lo, hi) = series.valid_range();
            Error::Range(format!(
                "window [{start}, {t_end}] for `{}` with residuals on [{lo}, {hi}]",
                series.sensor
            ))
        })?;
        let reason = if window.iter().copied().any(is_missing) {
            Some(ExclusionReason::Missing)
        } else {
            match standardize(window) {
                Some(z) => {
                    rows.push(z);
                    None
                }
                None => Some(ExclusionReason::ZeroVariance),
            }
        };
        match reason {
            Some(reason) => excluded.push(Excluded {
                sensor: series.sensor.clone(),
                reason,
            }),
            None => {
                sensors.push(series.sensor.clone());
                positions.push(i);
            }
        }
    }
    if rows.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} of {} sensors usable in window ending at {t_end}",
            rows.len(),
            residuals.len()
        )));
    }

    let n = rows.len();
    let z = DMatrix::from_fn(n, tau_corr, |i, t| rows[i][t]);
    let gram = &z * z.transpose();
    let mut matrix = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let v = gram[(i, j)].clamp(-1.0, 1.0);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }

    Ok(CorrelationMatrix {
        matrix,
        sensors,
        positions,
        t_end,
        tau_corr,
        excluded,
    })
}
