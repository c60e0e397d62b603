//! Centered running-mean detrending.
//!
//! The trace of each sensor is approximated by the mean of the `tau_av + 1`
//! samples centered on `t`; the residual is the observation minus that mean.
//! Residuals exist only where the centered window fits inside the series,
//! so a pipeline reading residuals at `t` lags the raw data by `tau_av / 2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{is_missing, Dataset, MISSING};

/// Residuals `R(t) = X(t) - X̄(t)` of one sensor.
///
/// Values are stored for the valid range only; a window that touches a
/// missing raw sample yields a [`MISSING`] residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub sensor: String,
    values: Vec<f64>,
    tau_av: usize,
    first: usize,
}

impl ResidualSeries {
    pub fn tau_av(&self) -> usize {
        self.tau_av
    }

    /// Inclusive step interval `[tau_av/2, T - 1 - tau_av/2]`.
    pub fn valid_range(&self) -> (usize, usize) {
        (self.first, self.first + self.values.len() - 1)
    }

    /// Residuals over the valid range, first element at `valid_range().0`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.first)
            .and_then(|i| self.values.get(i))
            .copied()
    }

    /// Residuals at steps `start..=end`, if the interval is inside the valid range.
    pub fn slice(&self, start: usize, end: usize) -> Option<&[f64]> {
        let (lo, hi) = self.valid_range();
        if start < lo || end > hi || start > end {
            return None;
        }
        Some(&self.values[start - lo..=end - lo])
    }
}

fn check_tau(tau_av: usize) -> Result<()> {
    if tau_av < 2 || !tau_av.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "tau_av must be even and >= 2, got {tau_av}"
        )));
    }
    Ok(())
}

/// Mean of `series[t - tau_av/2 ..= t + tau_av/2]`.
pub fn running_mean(series: &[f64], tau_av: usize, t: usize) -> Result<f64> {
    check_tau(tau_av)?;
    let half = tau_av / 2;
    if t < half || t + half >= series.len() {
        return Err(Error::Range(format!(
            "step {t} for a centered window of {} points over {} samples",
            tau_av + 1,
            series.len()
        )));
    }
    Ok(centered_mean(series, half, t))
}

#[inline]
fn centered_mean(series: &[f64], half: usize, t: usize) -> f64 {
    let window = &series[t - half..=t + half];
    window.iter().sum::<f64>() / window.len() as f64
}

pub fn residuals(
    sensor: impl Into<String>,
    series: &[f64],
    tau_av: usize,
) -> Result<ResidualSeries> {
    check_tau(tau_av)?;
    if series.len() <= tau_av {
        return Err(Error::TooShort {
            len: series.len(),
            needed: tau_av,
        });
    }
    let half = tau_av / 2;
    let values = (half..series.len() - half)
        .map(|t| {
            let window = &series[t - half..=t + half];
            if window.iter().copied().any(is_missing) {
                MISSING
            } else {
                series[t] - centered_mean(series, half, t)
            }
        })
        .collect();
    Ok(ResidualSeries {
        sensor: sensor.into(),
        values,
        tau_av,
        first: half,
    })
}

/// Residuals of every sensor in dataset order.
pub fn dataset_residuals(dataset: &Dataset, tau_av: usize) -> Result<Vec<ResidualSeries>> {
    dataset
        .sensors()
        .par_iter()
        .enumerate()
        .map(|(i, id)| residuals(id.clone(), dataset.series(i), tau_av))
        .collect()
}
