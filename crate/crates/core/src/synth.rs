//! Ground-truthed synthetic inputs.
//!
//! [`generate_walks`] builds lazy ±1 random walks where a planted group
//! follows a master walk: at each step a follower repeats the master's
//! increment with probability `rho`, otherwise it takes its own lazy step.
//! [`spiked_wigner`] builds `θ u uᵀ + W` with Gaussian symmetric noise whose
//! entries have variance `1/N²`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, LabelRegistry};
use crate::localize::default_group_size;
use crate::spectral::eigen_spectrum;

/// Tag carried by every planted walk.
pub const PLANTED_TAG: &str = "PLANTED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Total number of walks.
    pub n: usize,
    /// Size of the correlated group, master included. Zero gives pure noise.
    pub k0: usize,
    /// Number of time steps per walk.
    pub steps: usize,
    /// Probability of staying put.
    pub p0: f64,
    /// Probability of each of the `+1` and `-1` moves.
    pub p_step: f64,
    /// Probability that a follower copies the master's increment.
    pub rho: f64,
    /// Optional inclusive step interval outside which followers never copy.
    #[serde(default)]
    pub coupled_steps: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            n: 900,
            k0: 50,
            steps: 2000,
            p0: 0.9,
            p_step: 0.05,
            rho: 0.5,
            coupled_steps: None,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 {
            return bad("walk count must be >= 1".into());
        }
        if self.k0 > self.n {
            return bad(format!("k0 = {} exceeds n = {}", self.k0, self.n));
        }
        if self.steps == 0 {
            return bad("walks need at least one step".into());
        }
        for (name, p) in [("p0", self.p0), ("pstep", self.p_step), ("rho", self.rho)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if (self.p0 + 2.0 * self.p_step - 1.0).abs() > 1e-9 {
            return bad(format!(
                "p0 + 2 pstep must equal 1, got {}",
                self.p0 + 2.0 * self.p_step
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWalks {
    pub dataset: Dataset,
    pub labels: LabelRegistry,
    /// Indices of the planted walks, ascending.
    pub truth: Vec<usize>,
    pub master: Option<usize>,
}

impl SyntheticWalks {
    pub fn truth_ids(&self) -> Vec<&str> {
        self.truth
            .iter()
            .map(|&i| self.dataset.sensors()[i].as_str())
            .collect()
    }
}

#[inline]
fn lazy_increment(rng: &mut ChaCha8Rng, p0: f64, p_step: f64) -> i8 {
    let u: f64 = rng.random();
    if u < p0 {
        0
    } else if u < p0 + p_step {
        1
    } else {
        -1
    }
}

pub fn sensor_id(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("w{i:0width$}")
}

/// Lazy random walks with one planted master-follower group.
///
/// Labels: every walk gets `WALK` and `ZONE<z>` with `z = i mod round(√n)`;
/// planted walks additionally get [`PLANTED_TAG`].
pub fn generate_walks(config: &WalkConfig) -> Result<SyntheticWalks> {
    config.validate()?;
    let WalkConfig {
        n,
        k0,
        steps,
        p0,
        p_step,
        rho,
        coupled_steps,
        seed,
    } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let planted = sample(&mut rng, n, k0).into_vec();
    let master = planted.first().copied();
    let mut is_follower = vec![false; n];
    for &i in planted.iter().skip(1) {
        is_follower[i] = true;
    }

    let moves = steps - 1;
    let master_inc: Vec<i8> = match master {
        Some(_) => (0..moves)
            .map(|_| lazy_increment(&mut rng, p0, p_step))
            .collect(),
        None => Vec::new(),
    };
    let coupled = |t: usize| coupled_steps.is_none_or(|(a, b)| (a..=b).contains(&(t + 1)));

    let mut samples = Vec::with_capacity(n);
    for (i, &follower) in is_follower.iter().enumerate() {
        let mut path = Vec::with_capacity(steps);
        let mut x = 0.0f64;
        path.push(x);
        #[allow(clippy::needless_range_loop)]
        for t in 0..moves {
            let copies = Some(i) == master || (follower && rng.random::<f64>() < rho && coupled(t));
            let inc = if copies {
                master_inc[t]
            } else {
                lazy_increment(&mut rng, p0, p_step)
            };
            x += f64::from(inc);
            path.push(x);
        }
        samples.push(path);
    }

    let sensors: Vec<String> = (0..n).map(|i| sensor_id(i, n)).collect();
    let zones = default_group_size(n);
    let mut labels = LabelRegistry::new();
    let mut truth = planted.clone();
    truth.sort_unstable();
    for (i, id) in sensors.iter().enumerate() {
        let mut tags = vec!["WALK".to_string(), format!("ZONE{}", i % zones)];
        if truth.binary_search(&i).is_ok() {
            tags.push(PLANTED_TAG.to_string());
        }
        labels.insert(id.clone(), tags)?;
    }
    let dataset = Dataset::from_series(sensors, samples)?;
    Ok(SyntheticWalks {
        dataset,
        labels,
        truth,
        master,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedMatrixConfig {
    pub n: usize,
    pub theta: f64,
    /// Support of the planted unit vector, which is uniform on it.
    pub support: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SpikedMatrix {
    pub matrix: DMatrix<f64>,
    pub u: DVector<f64>,
}

/// Symmetric Gaussian noise; every entry on and above the diagonal has
/// variance `1/N²`.
pub fn wigner(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = 1.0 / n as f64;
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// `θ u uᵀ + W`. The diagonal is left as generated.
pub fn spiked_wigner(config: &SpikedMatrixConfig) -> Result<SpikedMatrix> {
    let n = config.n;
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if config.theta.is_nan() || config.theta < 0.0 {
        return Err(Error::InvalidParameter(format!("theta = {}", config.theta)));
    }
    let mut support = config.support.clone();
    support.sort_unstable();
    support.dedup();
    if support.is_empty() || support.iter().any(|&i| i >= n) {
        return Err(Error::InvalidParameter(format!(
            "support must be a non-empty subset of 0..{n}"
        )));
    }
    let mut u = DVector::zeros(n);
    let w = 1.0 / (support.len() as f64).sqrt();
    for &i in &support {
        u[i] = w;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let matrix = &u * u.transpose() * config.theta + wigner(n, &mut rng);
    Ok(SpikedMatrix { matrix, u })
}

/// Mean largest eigenvalue of pure noise `W` over `trials` seeds.
pub fn empirical_bulk_edge(n: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        total += eigen_spectrum(&wigner(n, &mut rng))?[0];
    }
    Ok(total / trials as f64)
}
