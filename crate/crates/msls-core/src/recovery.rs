//! Sparse recovery of active (direction, audio) classes from measured
//! magnitude-spectrum frames.
//!
//! The dictionary columns and each measured frame are projected into a
//! reduced space by a variable-sparsity PCA: the sample is divided by its
//! sparsity `k`, centered on the training column mean, and projected onto
//! the retained principal basis. Dividing by `k` makes a `k`-term mixture of
//! columns land exactly on the average of the single-column projections, so
//! mixtures and training samples live in one space. Orthogonal matching
//! pursuit then recovers the support frame by frame, and a majority vote
//! across frames yields the final support.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::MeasurementMatrix;
use crate::linalg::{dot, least_squares, norm, symmetric_eigen};
use crate::spectra::MagnitudeSpectrum;

#[derive(Error, Debug)]
pub enum RecoveryError {
    #[error("variance threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("dictionary needs at least two columns, got {0}")]
    TooFewColumns(usize),
    #[error("degenerate dictionary: centered columns carry no variance")]
    DegenerateDictionary,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sparsity must be at least 1")]
    ZeroSparsity,
    #[error("sparsity {k} exceeds atom count {q}")]
    SparsityTooLarge { k: usize, q: usize },
    #[error("all atoms are zero")]
    AllAtomsZero,
    #[error("no frame results to vote over")]
    NoFrames,
    #[error("vote names column {0} outside the dictionary")]
    DanglingIndex(usize),
    #[error("frame grid does not match dictionary grid")]
    GridMismatch,
}

/// Reduced-space projection fitted on the dictionary columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VspcaModel {
    /// Mean of the dictionary columns.
    pub mean: Vec<f64>,
    /// Orthonormal principal directions of the centered columns, row-major
    /// (`retained_dim` rows of length P).
    pub basis: Vec<Vec<f64>>,
    pub retained_dim: usize,
    pub variance_threshold: f64,
}

impl VspcaModel {
    /// Fit on the columns of `a`: the retained dimension is the smallest `d`
    /// whose leading principal components carry at least `variance_threshold`
    /// of the total variance.
    pub fn fit(a: &MeasurementMatrix, variance_threshold: f64) -> Result<Self, RecoveryError> {
        if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
            return Err(RecoveryError::BadThreshold(variance_threshold));
        }
        let (p, q) = (a.p(), a.q());
        if q < 2 {
            return Err(RecoveryError::TooFewColumns(q));
        }

        let mut mean = vec![0.0f64; p];
        for idx in 0..q {
            for (m, v) in mean.iter_mut().zip(a.column_values(idx)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= q as f64;
        }
        let centered: Vec<Vec<f64>> = (0..q)
            .map(|idx| {
                a.column_values(idx)
                    .iter()
                    .zip(&mean)
                    .map(|(v, m)| v - m)
                    .collect()
            })
            .collect();

        // Eigendecompose the smaller Gram form: Q x Q when Q <= P, else the
        // P x P scatter matrix.
        let (eigvals, directions): (Vec<f64>, Vec<Vec<f64>>) = if q <= p {
            let mut gram = vec![vec![0.0; q]; q];
            for i in 0..q {
                for j in i..q {
                    let v = dot(&centered[i], &centered[j]);
                    gram[i][j] = v;
                    gram[j][i] = v;
                }
            }
            let (vals, vecs) = symmetric_eigen(&gram);
            let dirs = vals
                .iter()
                .zip(&vecs)
                .map(|(&lam, v)| {
                    let mut u = vec![0.0; p];
                    for (cj, &vj) in centered.iter().zip(v) {
                        for (ui, &cji) in u.iter_mut().zip(cj) {
                            *ui += vj * cji;
                        }
                    }
                    let scale = if lam > 0.0 { 1.0 / lam.sqrt() } else { 0.0 };
                    for ui in u.iter_mut() {
                        *ui *= scale;
                    }
                    u
                })
                .collect();
            (vals, dirs)
        } else {
            let mut scatter = vec![vec![0.0; p]; p];
            for c in &centered {
                for i in 0..p {
                    let ci = c[i];
                    if ci == 0.0 {
                        continue;
                    }
                    for j in i..p {
                        scatter[i][j] += ci * c[j];
                    }
                }
            }
            for i in 0..p {
                for j in 0..i {
                    scatter[i][j] = scatter[j][i];
                }
            }
            symmetric_eigen(&scatter)
        };

        let total: f64 = eigvals.iter().filter(|&&v| v > 0.0).sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(RecoveryError::DegenerateDictionary);
        }
        let rank_floor = total * 1e-12;
        let mut cumulative = 0.0;
        let mut d = 0;
        for &v in &eigvals {
            if v <= rank_floor {
                break;
            }
            cumulative += v;
            d += 1;
            if cumulative >= variance_threshold * total * (1.0 - 1e-12) {
                break;
            }
        }
        if d == 0 {
            return Err(RecoveryError::DegenerateDictionary);
        }

        let mut basis: Vec<Vec<f64>> = directions.into_iter().take(d).collect();
        orthonormalize(&mut basis);
        for row in basis.iter_mut() {
            fix_sign(row);
        }

        Ok(VspcaModel {
            mean,
            basis,
            retained_dim: d,
            variance_threshold,
        })
    }

    /// Project a P-vector with sparsity `k`: `basis * (x / k - mean)`.
    pub fn transform(&self, x: &[f64], k: usize) -> Result<Vec<f64>, RecoveryError> {
        if k == 0 {
            return Err(RecoveryError::ZeroSparsity);
        }
        if x.len() != self.mean.len() {
            return Err(RecoveryError::Dimension {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        let inv_k = 1.0 / k as f64;
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| v * inv_k - m)
            .collect();
        Ok(self.basis.iter().map(|row| dot(row, &centered)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vspca model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Fit the reduced-space model on a measurement matrix.
pub fn fit_vspca(
    a: &MeasurementMatrix,
    variance_threshold: f64,
) -> Result<VspcaModel, RecoveryError> {
    VspcaModel::fit(a, variance_threshold)
}

/// One modified Gram-Schmidt pass over near-orthonormal rows.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    for i in 0..rows.len() {
        for j in 0..i {
            let c = dot(&rows[j], &rows[i]);
            let prev = rows[j].clone();
            for (vi, pj) in rows[i].iter_mut().zip(&prev) {
                *vi -= c * pj;
            }
        }
        let n = norm(&rows[i]);
        if n > 0.0 {
            for v in rows[i].iter_mut() {
                *v /= n;
            }
        }
    }
}

/// Deterministic sign convention: the largest-magnitude entry is positive.
fn fix_sign(row: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
}

/// Sparse recovery outcome for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectVector {
    /// Selected atom indices, in selection order.
    pub support: Vec<usize>,
    /// Least-squares weights aligned with `support`.
    pub weights: Vec<f64>,
    pub residual_norm: f64,
}

/// Early-stop tolerances for orthogonal matching pursuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpOptions {
    /// Stop once the residual norm falls below this.
    pub tol_abs: f64,
    /// Stop once the best normalized correlation falls below this.
    pub tol_corr: f64,
}

impl Default for OmpOptions {
    fn default() -> Self {
        OmpOptions {
            tol_abs: 1e-10,
            tol_corr: 1e-12,
        }
    }
}

/// Orthogonal matching pursuit: greedily select the atom with the largest
/// normalized correlation against the residual, refit all selected weights by
/// least squares, and repeat up to `k` times. Zero-norm atoms are skipped.
pub fn omp(
    atoms: &[Vec<f64>],
    target: &[f64],
    k: usize,
    opts: &OmpOptions,
) -> Result<ObjectVector, RecoveryError> {
    if k == 0 {
        return Err(RecoveryError::ZeroSparsity);
    }
    if k > atoms.len() {
        return Err(RecoveryError::SparsityTooLarge { k, q: atoms.len() });
    }
    let d = target.len();
    for a in atoms {
        if a.len() != d {
            return Err(RecoveryError::Dimension {
                expected: d,
                got: a.len(),
            });
        }
    }
    let atom_norms: Vec<f64> = atoms.iter().map(|a| norm(a)).collect();
    if atom_norms.iter().all(|&n| n == 0.0) {
        return Err(RecoveryError::AllAtomsZero);
    }

    let mut residual = target.to_vec();
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut weights: Vec<f64> = Vec::new();

    for _ in 0..k {
        if norm(&residual) < opts.tol_abs {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for (q_idx, a) in atoms.iter().enumerate() {
            if atom_norms[q_idx] == 0.0 || support.contains(&q_idx) {
                continue;
            }
            let corr = (dot(&residual, a) / atom_norms[q_idx]).abs();
            if best.is_none_or(|(_, b)| corr > b) {
                best = Some((q_idx, corr));
            }
        }
        let Some((chosen, corr)) = best else { break };
        if corr < opts.tol_corr {
            break;
        }
        support.push(chosen);
        let selected: Vec<&[f64]> = support.iter().map(|&i| atoms[i].as_slice()).collect();
        weights = least_squares(&selected, target);
        residual = target.to_vec();
        for (&idx, &w) in support.iter().zip(&weights) {
            for (r, a) in residual.iter_mut().zip(&atoms[idx]) {
                *r -= w * a;
            }
        }
    }

    Ok(ObjectVector {
        support,
        weights,
        residual_norm: norm(&residual),
    })
}

/// Dictionary columns projected once with `k = 1`, reused across frames.
pub struct FrameRecoverer<'a> {
    dict: &'a MeasurementMatrix,
    vspca: &'a VspcaModel,
    transformed_atoms: Vec<Vec<f64>>,
    opts: OmpOptions,
}

impl<'a> FrameRecoverer<'a> {
    pub fn new(
        dict: &'a MeasurementMatrix,
        vspca: &'a VspcaModel,
        opts: OmpOptions,
    ) -> Result<Self, RecoveryError> {
        if vspca.mean.len() != dict.p() {
            return Err(RecoveryError::Dimension {
                expected: dict.p(),
                got: vspca.mean.len(),
            });
        }
        let transformed_atoms = (0..dict.q())
            .map(|idx| vspca.transform(dict.column_values(idx), 1))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FrameRecoverer {
            dict,
            vspca,
            transformed_atoms,
            opts,
        })
    }

    pub fn transformed_atoms(&self) -> &[Vec<f64>] {
        &self.transformed_atoms
    }

    /// Recover one measured frame at sparsity `k`.
    pub fn recover(
        &self,
        frame: &MagnitudeSpectrum,
        k: usize,
    ) -> Result<ObjectVector, RecoveryError> {
        if frame.grid() != self.dict.grid() {
            return Err(RecoveryError::GridMismatch);
        }
        let target = self.vspca.transform(frame.values(), k)?;
        omp(&self.transformed_atoms, &target, k, &self.opts)
    }
}

/// One-shot frame recovery; campaigns should hold a [`FrameRecoverer`] so the
/// dictionary projection is not redone per frame.
pub fn recover_frame(
    dict: &MeasurementMatrix,
    vspca: &VspcaModel,
    frame: &MagnitudeSpectrum,
    k: usize,
) -> Result<ObjectVector, RecoveryError> {
    FrameRecoverer::new(dict, vspca, OmpOptions::default())?.recover(frame, k)
}

/// Aggregated vote over per-frame supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub per_index_votes: BTreeMap<usize, u32>,
    /// The k most-voted indices, strongest first.
    pub final_support: Vec<usize>,
    pub frames_used: usize,
}

/// Tally one vote per atom per frame it appears in; keep the `k` most-voted.
/// Ties break by higher summed |weight| across frames, then lower index.
pub fn majority_vote(
    frame_results: &[ObjectVector],
    k: usize,
) -> Result<VoteResult, RecoveryError> {
    if frame_results.is_empty() {
        return Err(RecoveryError::NoFrames);
    }
    if k == 0 {
        return Err(RecoveryError::ZeroSparsity);
    }
    let mut votes: BTreeMap<usize, u32> = BTreeMap::new();
    let mut weight_sums: BTreeMap<usize, f64> = BTreeMap::new();
    for frame in frame_results {
        for (&idx, &w) in frame.support.iter().zip(&frame.weights) {
            *votes.entry(idx).or_insert(0) += 1;
            *weight_sums.entry(idx).or_insert(0.0) += w.abs();
        }
    }
    let mut ranked: Vec<usize> = votes.keys().copied().collect();
    ranked.sort_by(|&a, &b| {
        votes[&b]
            .cmp(&votes[&a])
            .then(
                weight_sums[&b]
                    .partial_cmp(&weight_sums[&a])
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    ranked.truncate(k);
    Ok(VoteResult {
        per_index_votes: votes,
        final_support: ranked,
        frames_used: frame_results.len(),
    })
}

/// Map the voted support back to (direction, audio) pairs, strongest first.
pub fn reconstruct_sources(
    vote: &VoteResult,
    dict: &MeasurementMatrix,
) -> Result<Vec<(u32, u32)>, RecoveryError> {
    vote.final_support
        .iter()
        .map(|&idx| {
            if idx >= dict.q() {
                return Err(RecoveryError::DanglingIndex(idx));
            }
            let meta = dict.meta(idx);
            Ok((meta.direction_id, meta.audio_id))
        })
        .collect()
}
