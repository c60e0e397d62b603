//! Localization of the anomalously correlated sensor group.
//!
//! Three algorithms, all returning a [`LocalizationResult`]:
//!
//! * **lowrank**: best rank-1 approximation `σ q qᵀ` of the matrix, then the
//!   `k` entries of `q` with the largest magnitude. For rank 1, keeping the
//!   top-`k` entries of `q` is the exact sparse-PCA solution.
//! * **LAS** (large average submatrix): from a random `k × k` submatrix,
//!   alternately replace the row set by the `k` rows with the largest sum over
//!   the current columns, then the column set likewise, until neither
//!   changes. Multi-start with `L` restarts.
//! * **IGP** (iterative greedy procedure): from one random row, alternately
//!   add the single column, then the single row, that most increases the
//!   submatrix sum, until `k` rows and `k` columns are chosen. Multi-start.
//!
//! Restart `r` draws from the ChaCha8 stream `r` of `seed`, and ties between
//! restarts go to the lowest index, so results do not depend on the number of
//! worker threads.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{decompose, Decomposition};

/// Restart count for searches near the true group size.
pub const DEFAULT_RESTARTS: usize = 1000;
/// Restart count for the `k* = √N` search.
pub const DEFAULT_RESTARTS_SQRT_N: usize = 10_000;

/// Bound on LAS update rounds per restart.
const LAS_MAX_ROUNDS: usize = 10_000;

/// `ε_{k-1} − ε_k` must exceed this multiple of `ε_k − ε_{k+1}` for an elbow
/// to count as pronounced.
const CUSP_RATIO: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[serde(rename = "lowrank")]
    LowRank,
    Las,
    Igp,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::LowRank => "lowrank",
            Algorithm::Las => "las",
            Algorithm::Igp => "igp",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lowrank" | "low-rank" => Ok(Algorithm::LowRank),
            "las" => Ok(Algorithm::Las),
            "igp" => Ok(Algorithm::Igp),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationResult {
    pub algorithm: Algorithm,
    pub k: usize,
    /// Selected row indices, ascending.
    pub selected: Vec<usize>,
    /// Column set for the biclustering algorithms, ascending.
    pub columns: Option<Vec<usize>>,
    /// Entries of the `k`-sparse unit vector on `selected` (lowrank only).
    pub weights: Option<Vec<f64>>,
    /// `σ_k` for lowrank; submatrix sum divided by `k` for LAS and IGP.
    pub score: f64,
    pub restarts: usize,
    /// LAS update rounds of the winning restart.
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
}

impl LocalizationResult {
    /// Recompute the objective from `m` and the stored selection.
    pub fn recompute_score(&self, m: &DMatrix<f64>) -> f64 {
        match (&self.weights, &self.columns) {
            (Some(w), _) => {
                let mut s = 0.0;
                for (a, &i) in self.selected.iter().enumerate() {
                    for (b, &j) in self.selected.iter().enumerate() {
                        s += w[a] * m[(i, j)] * w[b];
                    }
                }
                s
            }
            (None, Some(cols)) => submatrix_sum(m, &self.selected, cols) / self.k as f64,
            (None, None) => submatrix_sum(m, &self.selected, &self.selected) / self.k as f64,
        }
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidParameter(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Range(format!("group size {k} for {n} sensors")));
    }
    Ok(())
}

pub fn submatrix_sum(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    cols.iter()
        .map(|&j| {
            let col = m.column(j);
            rows.iter().map(|&i| col[i]).sum::<f64>()
        })
        .sum()
}

/// Leading term of the best rank-1 approximation, `σ q qᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1 {
    /// Eigenvalue of largest magnitude (negative only if the matrix is
    /// dominated by a negative eigenvalue).
    pub sigma: f64,
    /// Unit vector with non-negative entry sum.
    pub q: DVector<f64>,
}

pub fn rank1_from_decomposition(d: &Decomposition) -> Rank1 {
    let n = d.eigenvalues.len();
    // Descending order: the largest magnitude is at one end. Prefer the top on ties.
    let idx = if d.eigenvalues[n - 1].abs() > d.eigenvalues[0].abs() {
        n - 1
    } else {
        0
    };
    let mut q = d.eigenvector(idx);
    if q.sum() < 0.0 {
        q.neg_mut();
    }
    Rank1 {
        sigma: d.eigenvalues[idx],
        q,
    }
}

/// Frobenius-optimal rank-1 approximation of a symmetric matrix.
pub fn rank1_approx(m: &DMatrix<f64>) -> Result<Rank1> {
    check_square(m)?;
    Ok(rank1_from_decomposition(&decompose(m)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseComponent {
    /// `q` restricted to `selected` and renormalized; zero elsewhere.
    pub q_k: DVector<f64>,
    /// `q_kᵀ M q_k`.
    pub sigma_k: f64,
    /// Ascending indices of the `k` largest `|qᵢ|`.
    pub selected: Vec<usize>,
}

/// Indices sorted by descending `|qᵢ|`, ties to the lower index.
fn magnitude_order(q: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].abs().total_cmp(&q[a].abs()).then(a.cmp(&b)));
    order
}

pub fn sparse_topk(q: &DVector<f64>, m: &DMatrix<f64>, k: usize) -> Result<SparseComponent> {
    let n = check_square(m)?;
    if q.len() != n {
        return Err(Error::InvalidParameter(format!(
            "vector of length {} for a {n}x{n} matrix",
            q.len()
        )));
    }
    check_k(k, n)?;
    let mut selected = magnitude_order(q);
    selected.truncate(k);
    selected.sort_unstable();
    let mut q_k = DVector::zeros(n);
    for &i in &selected {
        q_k[i] = q[i];
    }
    let norm = q_k.norm();
    if norm > 0.0 {
        q_k /= norm;
    }
    let sigma_k = (m * &q_k).dot(&q_k);
    Ok(SparseComponent {
        q_k,
        sigma_k,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Elbow {
    pub k: usize,
    /// `ε_k = ‖M − σ_k q_k q_kᵀ‖_F` for `k = 1..=N` (index `k − 1`).
    pub errors: Vec<f64>,
    /// False when the curve has no clear cusp at `k`; the choice is then
    /// low confidence.
    pub pronounced: bool,
}

/// Smallest `k` with `ε_k − ε_{k+1} < epsilon`, or `N` if there is none.
pub fn elbow_size(m: &DMatrix<f64>, epsilon: f64) -> Result<Elbow> {
    let n = check_square(m)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "elbow threshold must be positive, got {epsilon}"
        )));
    }
    let q = rank1_approx(m)?.q;
    let order = magnitude_order(&q);
    let frob2 = m.norm_squared();

    // Grow the support one index at a time; with ‖q_k‖ = 1 and
    // σ_k = q_kᵀ M q_k, ε_k² = ‖M‖² − σ_k².
    let mut errors = Vec::with_capacity(n);
    let mut quad = 0.0;
    let mut norm2 = 0.0;
    for (pos, &j) in order.iter().enumerate() {
        let cross: f64 = order[..pos].iter().map(|&i| q[i] * m[(i, j)]).sum();
        quad += 2.0 * q[j] * cross + q[j] * q[j] * m[(j, j)];
        norm2 += q[j] * q[j];
        let sigma_k = if norm2 > 0.0 { quad / norm2 } else { 0.0 };
        errors.push((frob2 - sigma_k * sigma_k).max(0.0).sqrt());
    }

    let k = (1..n)
        .find(|&k| errors[k - 1] - errors[k] < epsilon)
        .unwrap_or(n);
    let pronounced = k > 1 && k < n && {
        let before = errors[k - 2] - errors[k - 1];
        let after = (errors[k - 1] - errors[k]).max(0.0);
        before > CUSP_RATIO * after
    };
    Ok(Elbow {
        k,
        errors,
        pronounced,
    })
}

/// `k* = round(√N)`, at least 1.
pub fn default_group_size(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

pub fn lowrank(m: &DMatrix<f64>, k: usize) -> Result<LocalizationResult> {
    let rank1 = rank1_approx(m)?;
    lowrank_from(m, &rank1, k)
}

/// Lowrank localization reusing a previously computed rank-1 term.
pub fn lowrank_from(m: &DMatrix<f64>, rank1: &Rank1, k: usize) -> Result<LocalizationResult> {
    let sparse = sparse_topk(&rank1.q, m, k)?;
    let weights = sparse.selected.iter().map(|&i| sparse.q_k[i]).collect();
    Ok(LocalizationResult {
        algorithm: Algorithm::LowRank,
        k,
        selected: sparse.selected,
        columns: None,
        weights: Some(weights),
        score: sparse.sigma_k,
        restarts: 1,
        iterations: None,
        seed: None,
    })
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// The `k` indices with largest `scores`, ties to members of `prefer`, then to
/// the lower index. Returned ascending.
fn top_k(scores: &[f64], k: usize, prefer: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| -> Ordering {
        scores[b]
            .total_cmp(&scores[a])
            .then(prefer[b].cmp(&prefer[a]))
            .then(a.cmp(&b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Sum of the columns `cols` of `m`, i.e. row scores over a column set.
fn row_scores(m: &DMatrix<f64>, cols: &[usize], out: &mut [f64]) {
    out.fill(0.0);
    for &j in cols {
        for (o, v) in out.iter_mut().zip(m.column(j).iter()) {
            *o += v;
        }
    }
}

fn membership(set: &[usize], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &i in set {
        mask[i] = true;
    }
    mask
}

/// Row update of LAS: the best `k` rows for the given columns.
pub fn las_row_update(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = m.nrows();
    let mut scores = vec![0.0; n];
    row_scores(m, cols, &mut scores);
    top_k(&scores, rows.len(), &membership(rows, n))
}

/// Column update of LAS: the best `k` columns for the given rows.
pub fn las_column_update(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = m.ncols();
    let scores: Vec<f64> = (0..n)
        .map(|j| {
            let col = m.column(j);
            rows.iter().map(|&i| col[i]).sum()
        })
        .collect();
    top_k(&scores, cols.len(), &membership(cols, n))
}

/// True when neither LAS update changes `(rows, cols)`.
pub fn las_is_local_max(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> bool {
    las_row_update(m, rows, cols) == rows && las_column_update(m, rows, cols) == cols
}

struct Bicluster {
    rows: Vec<usize>,
    cols: Vec<usize>,
    sum: f64,
    rounds: usize,
}

fn las_restart(m: &DMatrix<f64>, mt: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Bicluster {
    let n = m.nrows();
    let mut rows = sample(rng, n, k).into_vec();
    let mut cols = sample(rng, n, k).into_vec();
    rows.sort_unstable();
    cols.sort_unstable();
    let mut scores = vec![0.0; n];
    let mut rounds = 0;
    loop {
        rounds += 1;
        row_scores(m, &cols, &mut scores);
        let new_rows = top_k(&scores, k, &membership(&rows, n));
        // column sums over rows = row sums of the transpose
        row_scores(mt, &new_rows, &mut scores);
        let new_cols = top_k(&scores, k, &membership(&cols, n));
        let fixed = new_rows == rows && new_cols == cols;
        rows = new_rows;
        cols = new_cols;
        if fixed || rounds >= LAS_MAX_ROUNDS {
            break;
        }
    }
    let sum = submatrix_sum(m, &rows, &cols);
    Bicluster {
        rows,
        cols,
        sum,
        rounds,
    }
}

fn igp_restart(m: &DMatrix<f64>, mt: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Bicluster {
    let n = m.nrows();
    let first = rng.random_range(0..n);
    let mut in_rows = vec![false; n];
    let mut in_cols = vec![false; n];
    let mut rows = vec![first];
    let mut cols = Vec::with_capacity(k);
    in_rows[first] = true;
    // column score: sum over chosen rows; row score: sum over chosen columns
    let mut col_score: Vec<f64> = mt.column(first).iter().copied().collect();
    let mut row_score = vec![0.0; n];

    let best = |scores: &[f64], taken: &[bool]| -> usize {
        let mut best = usize::MAX;
        for (i, &s) in scores.iter().enumerate() {
            if !taken[i] && (best == usize::MAX || s > scores[best]) {
                best = i;
            }
        }
        best
    };

    while cols.len() < k || rows.len() < k {
        if cols.len() < k {
            let j = best(&col_score, &in_cols);
            in_cols[j] = true;
            cols.push(j);
            for (r, v) in row_score.iter_mut().zip(m.column(j).iter()) {
                *r += v;
            }
        }
        if rows.len() < k {
            let i = best(&row_score, &in_rows);
            in_rows[i] = true;
            rows.push(i);
            for (c, v) in col_score.iter_mut().zip(mt.column(i).iter()) {
                *c += v;
            }
        }
    }
    rows.sort_unstable();
    cols.sort_unstable();
    let sum = submatrix_sum(m, &rows, &cols);
    Bicluster {
        rows,
        cols,
        sum,
        rounds: 2 * k,
    }
}

fn multistart(
    m: &DMatrix<f64>,
    algorithm: Algorithm,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<LocalizationResult> {
    let n = check_square(m)?;
    check_k(k, n)?;
    if restarts == 0 {
        return Err(Error::InvalidParameter("restart count must be >= 1".into()));
    }
    let mt = m.transpose();
    let run = |r: usize| {
        let mut rng = restart_rng(seed, r);
        let b = match algorithm {
            Algorithm::Las => las_restart(m, &mt, k, &mut rng),
            _ => igp_restart(m, &mt, k, &mut rng),
        };
        (r, b)
    };
    let (_, best) = (0..restarts)
        .into_par_iter()
        .map(run)
        .reduce_with(|a, b| {
            // higher sum wins; equal sums go to the earlier restart
            match b.1.sum.total_cmp(&a.1.sum) {
                Ordering::Greater => b,
                Ordering::Less => a,
                Ordering::Equal => {
                    if a.0 <= b.0 {
                        a
                    } else {
                        b
                    }
                }
            }
        })
        .expect("at least one restart");
    Ok(LocalizationResult {
        algorithm,
        k,
        selected: best.rows,
        columns: Some(best.cols),
        weights: None,
        score: best.sum / k as f64,
        restarts,
        iterations: (algorithm == Algorithm::Las).then_some(best.rounds),
        seed: Some(seed),
    })
}

pub fn las(m: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<LocalizationResult> {
    multistart(m, Algorithm::Las, k, restarts, seed)
}

pub fn igp(m: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<LocalizationResult> {
    multistart(m, Algorithm::Igp, k, restarts, seed)
}

pub fn localize(
    m: &DMatrix<f64>,
    algorithm: Algorithm,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<LocalizationResult> {
    match algorithm {
        Algorithm::LowRank => lowrank(m, k),
        Algorithm::Las => las(m, k, restarts, seed),
        Algorithm::Igp => igp(m, k, restarts, seed),
    }
}
