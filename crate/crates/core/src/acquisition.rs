//! Local entropy search: score candidate queries by how much they tell us
//! about where local descents on posterior samples end up.
//!
//! ```text
//! alpha(x) = H[y(x) | D] - (1/L) sum_l H[y(x) | D u Q^l]
//! ```
//!
//! `Q^l` is the discretized descent sequence of the `l`-th sample path,
//! started at the incumbent. Only variances enter, so the score is
//! `mean_l 0.5 ln(var(x | D) / var(x | D u Q^l))`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{descend, discretize, distance, DescentSequence, OptimizerConfig};
use crate::error::{check_dim, LesError, Result};
use crate::gp::{AugmentedFactor, BoxDomain, GpModel};
use crate::pathwise::{draw_basis, draw_path, SamplePath, DEFAULT_NUM_FEATURES};
use crate::rng::{derive_seed, rng_from_seed};

/// Largest fraction of sequences whose augmented factorization may fail
/// before scoring gives up.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub num_paths: usize,
    pub support_points: usize,
    pub num_features: usize,
    pub optimizer: OptimizerConfig,
    /// Candidates closer than this are merged. `None` means `1e-6 * sqrt(d)`.
    pub dedup_radius: Option<f64>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            num_paths: 250,
            support_points: 8,
            num_features: DEFAULT_NUM_FEATURES,
            optimizer: OptimizerConfig::adam(),
            dedup_radius: None,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(LesError::Argument("need at least one sample path".into()));
        }
        if self.support_points < 2 {
            return Err(LesError::Argument(format!(
                "need at least 2 support points, got {}",
                self.support_points
            )));
        }
        if self.num_features == 0 {
            return Err(LesError::Argument("need at least one random feature".into()));
        }
        if let Some(r) = self.dedup_radius {
            if !(r >= 0.0) {
                return Err(LesError::Argument(format!(
                    "dedup radius must be non-negative, got {r}"
                )));
            }
        }
        self.optimizer.validate()
    }

    pub fn dedup_radius_for(&self, dim: usize) -> f64 {
        self.dedup_radius.unwrap_or(1e-6 * (dim as f64).sqrt())
    }
}

/// Sample paths, their descents from the incumbent, and everything needed to
/// score candidates against them.
#[derive(Debug, Clone)]
pub struct AcquisitionRound<'m> {
    model: &'m GpModel,
    incumbent: Vec<f64>,
    paths: Vec<SamplePath>,
    sequences: Vec<DescentSequence>,
    supports: Vec<Vec<Vec<f64>>>,
    factors: Vec<Option<AugmentedFactor>>,
    candidates: Vec<Vec<f64>>,
    fallback: bool,
}

impl<'m> AcquisitionRound<'m> {
    /// Assembles a round from given paths and supports. Useful when the
    /// descent sequences come from elsewhere.
    pub fn from_supports(
        model: &'m GpModel,
        incumbent: Vec<f64>,
        supports: Vec<Vec<Vec<f64>>>,
        candidates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_dim(model.dim(), incumbent.len(), "incumbent")?;
        if supports.is_empty() {
            return Err(LesError::Argument("round needs at least one sequence".into()));
        }
        if candidates.is_empty() {
            return Err(LesError::Argument("round needs at least one candidate".into()));
        }
        for c in &candidates {
            check_dim(model.dim(), c.len(), "candidate")?;
        }
        let factors = supports.iter().map(|s| augment_or_warn(model, s)).collect();
        Ok(Self {
            model,
            incumbent,
            paths: Vec::new(),
            sequences: Vec::new(),
            supports,
            factors,
            candidates,
            fallback: false,
        })
    }

    pub fn model(&self) -> &GpModel {
        self.model
    }

    pub fn incumbent(&self) -> &[f64] {
        &self.incumbent
    }

    pub fn num_sequences(&self) -> usize {
        self.supports.len()
    }

    pub fn paths(&self) -> &[SamplePath] {
        &self.paths
    }

    pub fn sequences(&self) -> &[DescentSequence] {
        &self.sequences
    }

    pub fn supports(&self) -> &[Vec<Vec<f64>>] {
        &self.supports
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    /// Set when every descent collapsed onto the incumbent and the candidate
    /// set was padded with uniform points.
    pub fn fallback(&self) -> bool {
        self.fallback
    }

    pub fn failed_factors(&self) -> usize {
        self.factors.iter().filter(|f| f.is_none()).count()
    }

    fn usable_factors(&self) -> Result<impl Iterator<Item = &AugmentedFactor>> {
        let failed = self.failed_factors();
        if failed as f64 > MAX_FAILED_FRACTION * self.factors.len() as f64 {
            return Err(LesError::Numerical(format!(
                "{failed} of {} augmented factorizations failed",
                self.factors.len()
            )));
        }
        Ok(self.factors.iter().flatten())
    }
}

fn augment_or_warn(model: &GpModel, support: &[Vec<f64>]) -> Option<AugmentedFactor> {
    match model.augment(support) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("dropping a descent sequence: {e}");
            None
        }
    }
}

/// Draws `L` paths, descends each from the incumbent, discretizes the
/// sequences and caches one augmented factorization per sequence.
pub fn build_round<'m>(
    model: &'m GpModel,
    incumbent: &[f64],
    cfg: &AcquisitionConfig,
    rng_seed: u64,
) -> Result<AcquisitionRound<'m>> {
    cfg.validate()?;
    let domain = model.domain();
    check_dim(model.dim(), incumbent.len(), "incumbent")?;
    if !domain.contains(incumbent) {
        return Err(LesError::Argument(format!(
            "incumbent {incumbent:?} outside the domain"
        )));
    }
    let path_seed = derive_seed(rng_seed, 1);
    let units: Vec<(SamplePath, DescentSequence, Vec<Vec<f64>>, Option<AugmentedFactor>)> = (0..cfg.num_paths)
        .into_par_iter()
        .map(|l| {
            let seed = derive_seed(path_seed, l as u64);
            let basis = Arc::new(draw_basis(model.hyperparams(), cfg.num_features, derive_seed(seed, 0))?);
            let path = draw_path(model, basis, derive_seed(seed, 1))?;
            let seq = descend(&path, incumbent, &cfg.optimizer, domain)?;
            let support = discretize(&seq, cfg.support_points)?;
            let factor = augment_or_warn(model, &support);
            Ok((path, seq, support, factor))
        })
        .collect::<Result<_>>()?;

    let mut paths = Vec::with_capacity(units.len());
    let mut sequences = Vec::with_capacity(units.len());
    let mut supports = Vec::with_capacity(units.len());
    let mut factors = Vec::with_capacity(units.len());
    for (p, s, q, f) in units {
        paths.push(p);
        sequences.push(s);
        supports.push(q);
        factors.push(f);
    }

    let radius = cfg.dedup_radius_for(model.dim());
    let mut candidates = dedup(supports.iter().flatten(), radius);
    let degenerate = candidates.iter().all(|c| distance(c, incumbent) <= radius);
    if degenerate {
        log::warn!("all descents stalled at the incumbent; scoring uniform candidates instead");
        let mut rng = rng_from_seed(derive_seed(rng_seed, 2));
        candidates = vec![incumbent.to_vec()];
        for _ in 0..cfg.num_paths {
            candidates.push(uniform_point(domain, &mut rng));
        }
    }
    Ok(AcquisitionRound {
        model,
        incumbent: incumbent.to_vec(),
        paths,
        sequences,
        supports,
        factors,
        candidates,
        fallback: degenerate,
    })
}

pub(crate) fn uniform_point<R: Rng>(domain: &BoxDomain, rng: &mut R) -> Vec<f64> {
    domain
        .lower()
        .iter()
        .zip(domain.upper())
        .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}

/// Keeps the first of any group of points within `radius` of each other.
fn dedup<'a>(points: impl Iterator<Item = &'a Vec<f64>>, radius: f64) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if kept.iter().all(|k| distance(k, p) > radius) {
            kept.push(p.clone());
        }
    }
    kept
}

/// LES score of `x` under `round`.
pub fn les_score(round: &AcquisitionRound, x: &[f64]) -> Result<f64> {
    let model = round.model;
    check_dim(model.dim(), x.len(), "query point")?;
    let factors = round.usable_factors()?;
    let noise = model.hyperparams().noise_var;
    let (_, v) = model.whitened_cross(x);
    let latent = model.predict_unchecked(x).latent_var;
    let base = latent + noise;
    let (mut total, mut count) = (0.0, 0usize);
    for f in factors {
        let aug = (latent - f.variance_reduction(model, x, &v)).max(0.0) + noise;
        total += 0.5 * (base / aug).ln();
        count += 1;
    }
    let score = total / count as f64;
    if !score.is_finite() {
        return Err(LesError::Numerical(format!("non-finite score at {x:?}")));
    }
    Ok(score)
}

/// The highest-scoring candidate. Ties go to the lower posterior mean, then
/// to the earlier candidate.
pub fn select_query(round: &AcquisitionRound) -> Result<(Vec<f64>, f64)> {
    let scores = candidate_scores(round)?;
    let model = round.model;
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best]
                && model.predict_unchecked(&round.candidates[i]).mean
                    < model.predict_unchecked(&round.candidates[best]).mean);
        if better {
            best = i;
        }
    }
    Ok((round.candidates[best].clone(), scores[best]))
}

/// Scores of every candidate, in candidate order.
pub fn candidate_scores(round: &AcquisitionRound) -> Result<Vec<f64>> {
    round.candidates.par_iter().map(|c| les_score(round, c)).collect()
}

/// Batch score: `0.5 ln det S(B | D) - mean_l 0.5 ln det S(B | D u Q^l)`
/// over noisy predictive covariances.
pub fn qles_score(round: &AcquisitionRound, batch: &[Vec<f64>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(LesError::Argument("empty batch".into()));
    }
    let model = round.model;
    for b in batch {
        check_dim(model.dim(), b.len(), "batch point")?;
    }
    let factors = round.usable_factors()?;
    let q = batch.len();
    let noise = model.hyperparams().noise_var;
    let vs: Vec<Vec<f64>> = batch.iter().map(|b| model.whitened_cross(b).1).collect();
    let mut base = DMatrix::from_fn(q, q, |i, j| {
        let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
        model.k(&batch[i], &batch[j]) - dot
    });
    for i in 0..q {
        base[(i, i)] = base[(i, i)].max(0.0) + noise;
    }
    let base_logdet = log_det(&base)?;
    let (mut total, mut count) = (0.0, 0usize);
    for f in factors {
        let w = f.whitened_batch(model, batch, &vs);
        let mut aug = &base - w.transpose() * &w;
        for i in 0..q {
            // same clamp as the single-point variance
            aug[(i, i)] = (aug[(i, i)] - noise).max(0.0) + noise;
        }
        total += 0.5 * (base_logdet - log_det(&aug)?);
        count += 1;
    }
    Ok(total / count as f64)
}

fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .filter(|c| c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()))
        .ok_or_else(|| LesError::Numerical("batch covariance is not positive definite".into()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Greedily grows a batch of `q` distinct candidates, each step adding the
/// candidate that maximizes the batch score.
pub fn select_batch(round: &AcquisitionRound, q: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    if q == 0 {
        return Err(LesError::Argument("batch size must be positive".into()));
    }
    let q = q.min(round.candidates.len());
    let mut chosen: Vec<usize> = Vec::with_capacity(q);
    let mut score = 0.0;
    for _ in 0..q {
        let scored: Vec<(usize, Result<f64>)> = (0..round.candidates.len())
            .into_par_iter()
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let mut batch: Vec<Vec<f64>> = chosen.iter().map(|&c| round.candidates[c].clone()).collect();
                batch.push(round.candidates[i].clone());
                (i, qles_score(round, &batch))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scored {
            // a candidate that makes the batch covariance singular is skipped
            let Ok(s) = s else { continue };
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let Some((i, s)) = best else { break };
        chosen.push(i);
        score = s;
    }
    if chosen.is_empty() {
        return Err(LesError::Numerical("no candidate gave a valid batch".into()));
    }
    Ok((chosen.iter().map(|&i| round.candidates[i].clone()).collect(), score))
}

/// Local Thompson sampling: descend one posterior sample from the incumbent
/// and propose its terminal point.
pub fn local_thompson_select(
    model: &GpModel,
    incumbent: &[f64],
    cfg: &OptimizerConfig,
    domain: &BoxDomain,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    local_thompson_select_with(model, incumbent, cfg, domain, DEFAULT_NUM_FEATURES, rng_seed)
}

pub fn local_thompson_select_with(
    model: &GpModel,
    incumbent: &[f64],
    cfg: &OptimizerConfig,
    domain: &BoxDomain,
    num_features: usize,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    let basis = Arc::new(draw_basis(model.hyperparams(), num_features, derive_seed(rng_seed, 0))?);
    let path = draw_path(model, basis, derive_seed(rng_seed, 1))?;
    Ok(descend(&path, incumbent, cfg, domain)?.terminal().to_vec())
}

/// Observed input with the lowest posterior mean.
pub fn select_incumbent(model: &GpModel) -> Result<Vec<f64>> {
    let inputs = model.dataset().inputs();
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in inputs.iter().enumerate() {
        let m = model.predict_unchecked(x).mean;
        if best.map_or(true, |(_, b)| m < b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| inputs[i].clone())
        .ok_or_else(|| LesError::Argument("no observations to pick an incumbent from".into()))
}
