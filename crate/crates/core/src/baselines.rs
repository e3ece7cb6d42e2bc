//! Model-based label aggregation baselines for crowdsourcing data.
//!
//! Boolean labels are `±1` (`i8`); the class-index view used by the
//! metrics maps `-1 → 0` and `+1 → 1`. Every tie resolves to `+1`.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub fn label_to_class(label: i8) -> usize {
    usize::from(label > 0)
}

pub fn class_to_label(class: usize) -> i8 {
    if class == 0 {
        -1
    } else {
        1
    }
}

fn sign(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote {
    pub item: usize,
    pub worker: usize,
    pub value: i8,
}

/// Sparse item × worker matrix of `±1` votes.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteMatrix {
    n_items: usize,
    n_workers: usize,
    votes: Vec<Vote>,
    by_item: Vec<Vec<usize>>,
    by_worker: Vec<Vec<usize>>,
}

impl VoteMatrix {
    /// At most one vote per (item, worker) pair and at least one vote per
    /// item.
    pub fn new(n_items: usize, n_workers: usize, votes: Vec<Vote>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(votes.len());
        let mut by_item = vec![Vec::new(); n_items];
        let mut by_worker = vec![Vec::new(); n_workers];
        for (k, v) in votes.iter().enumerate() {
            if v.item >= n_items || v.worker >= n_workers {
                return Err(Error::invalid(format!(
                    "vote ({}, {}) outside a {n_items} x {n_workers} matrix",
                    v.item, v.worker
                )));
            }
            if v.value != 1 && v.value != -1 {
                return Err(Error::invalid(format!("vote value {} is not ±1", v.value)));
            }
            if !seen.insert((v.item, v.worker)) {
                return Err(Error::invalid(format!(
                    "worker {} votes twice on item {}",
                    v.worker, v.item
                )));
            }
            by_item[v.item].push(k);
            by_worker[v.worker].push(k);
        }
        if let Some(i) = by_item.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("item {i} has no votes")));
        }
        Ok(VoteMatrix {
            n_items,
            n_workers,
            votes,
            by_item,
            by_worker,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    /// Indices into [`votes`](Self::votes) for one item.
    pub fn item_votes(&self, item: usize) -> &[usize] {
        &self.by_item[item]
    }

    pub fn worker_votes(&self, worker: usize) -> &[usize] {
        &self.by_worker[worker]
    }
}

/// Sign of each item's vote sum.
pub fn majority_vote(v: &VoteMatrix) -> Vec<i8> {
    (0..v.n_items)
        .map(|i| {
            let s: i32 = v.by_item[i].iter().map(|&e| i32::from(v.votes[e].value)).sum();
            if s >= 0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Iterative message passing on the item–worker graph.
///
/// Worker-to-item messages start i.i.d. `Normal(1, 1)` from the baseline
/// stream of `seed`.
pub fn kos(v: &VoteMatrix, k_max: usize, seed: u64) -> Result<Vec<i8>> {
    let normal = Normal::new(1.0, 1.0).expect("unit variance is valid");
    let mut rng = seed::stream(seed, seed::BASELINE);
    let init: Vec<f64> = (0..v.votes.len()).map(|_| normal.sample(&mut rng)).collect();
    kos_from(v, k_max, init)
}

/// [`kos`] with explicit initial worker-to-item messages, one per vote.
///
/// Each round computes, for every vote `(i, j)`,
/// `x_{i→j} = Σ_{j'≠j} A_{ij'} y_{j'→i}` and then
/// `y_{j→i} = Σ_{i'≠i} A_{i'j} x_{i'→j}`. A worker with a single vote has
/// an empty sum and keeps its previous message. Messages are rescaled each
/// round by a power of two near their largest magnitude, which leaves every
/// sign unchanged.
pub fn kos_from(v: &VoteMatrix, k_max: usize, init: Vec<f64>) -> Result<Vec<i8>> {
    if k_max < 1 {
        return Err(Error::invalid("KOS needs at least one iteration"));
    }
    if init.len() != v.votes.len() {
        return Err(Error::dim("one initial message per vote is required"));
    }
    let a: Vec<f64> = v.votes.iter().map(|e| f64::from(e.value)).collect();
    let mut y = init;
    let mut x = vec![0.0; a.len()];
    let mut item_sum = vec![0.0; v.n_items];
    let mut worker_sum = vec![0.0; v.n_workers];
    for _ in 0..k_max {
        item_sum.iter_mut().for_each(|s| *s = 0.0);
        for (k, e) in v.votes.iter().enumerate() {
            item_sum[e.item] += a[k] * y[k];
        }
        for (k, e) in v.votes.iter().enumerate() {
            x[k] = if v.by_item[e.item].len() > 1 {
                item_sum[e.item] - a[k] * y[k]
            } else {
                0.0
            };
        }
        worker_sum.iter_mut().for_each(|s| *s = 0.0);
        for (k, e) in v.votes.iter().enumerate() {
            worker_sum[e.worker] += a[k] * x[k];
        }
        for (k, e) in v.votes.iter().enumerate() {
            if v.by_worker[e.worker].len() > 1 {
                y[k] = worker_sum[e.worker] - a[k] * x[k];
            }
        }
        // A power-of-two factor rescales exactly, so exact ties survive.
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 && scale.is_finite() {
            let factor = 2f64.powi(-(scale.log2().ceil() as i32));
            y.iter_mut().for_each(|v| *v *= factor);
        }
    }
    Ok((0..v.n_items)
        .map(|i| sign(v.by_item[i].iter().map(|&k| a[k] * y[k]).sum()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Beta prior shape on worker reliability.
    pub alpha: f64,
    pub beta: f64,
    pub iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            alpha: 1.2,
            beta: 1.0,
            iters: 50,
        }
    }
}

const RELIABILITY_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EmResult {
    pub labels: Vec<i8>,
    /// Per-item posterior probability of `+1`.
    pub posteriors: Vec<f64>,
    /// Per-worker probability of voting the true label.
    pub reliabilities: Vec<f64>,
}

/// One-coin EM with a Beta(α, β) prior on each worker's reliability.
///
/// Reliabilities start at 0.5, so the first E-step is uninformative. Each
/// round is an E-step (posteriors under a uniform class prior) followed by
/// the MAP M-step `p_j = (α - 1 + s_j) / (α + β - 2 + n_j)`, where `s_j` is
/// worker `j`'s soft agreement and `n_j` its vote count. Labels come from a
/// final E-step.
pub fn em_boolean(v: &VoteMatrix, cfg: &EmConfig) -> Result<EmResult> {
    if cfg.iters < 1 {
        return Err(Error::invalid("EM needs at least one iteration"));
    }
    if !(cfg.alpha > 0.0 && cfg.beta > 0.0) {
        return Err(Error::invalid(format!(
            "Beta prior ({}, {}) must have positive shapes",
            cfg.alpha, cfg.beta
        )));
    }
    let mut p = vec![0.5; v.n_workers];
    let mut post = vec![0.5; v.n_items];
    for _ in 0..cfg.iters {
        e_step(v, &p, &mut post);
        for (j, pj) in p.iter_mut().enumerate() {
            let votes = &v.by_worker[j];
            let agree: f64 = votes
                .iter()
                .map(|&k| {
                    let e = v.votes[k];
                    if e.value > 0 {
                        post[e.item]
                    } else {
                        1.0 - post[e.item]
                    }
                })
                .sum();
            let den = cfg.alpha + cfg.beta - 2.0 + votes.len() as f64;
            let raw = if den > 0.0 {
                (cfg.alpha - 1.0 + agree) / den
            } else {
                0.5
            };
            *pj = raw.clamp(RELIABILITY_CLAMP, 1.0 - RELIABILITY_CLAMP);
        }
    }
    e_step(v, &p, &mut post);
    Ok(EmResult {
        labels: post.iter().map(|&q| sign(q - 0.5)).collect(),
        posteriors: post,
        reliabilities: p,
    })
}

fn e_step(v: &VoteMatrix, p: &[f64], post: &mut [f64]) {
    let log_odds: Vec<f64> = p.iter().map(|&q| (q / (1.0 - q)).ln()).collect();
    for (i, out) in post.iter_mut().enumerate() {
        let l: f64 = v.by_item[i]
            .iter()
            .map(|&k| f64::from(v.votes[k].value) * log_odds[v.votes[k].worker])
            .sum();
        *out = 1.0 / (1.0 + (-l).exp());
    }
}

pub const GRADE_MIN: f64 = 0.0;
pub const GRADE_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grade {
    pub item: usize,
    pub worker: usize,
    pub value: f64,
}

/// Sparse item × worker matrix of real grades in `[0, 10]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradeMatrix {
    n_items: usize,
    n_workers: usize,
    grades: Vec<Grade>,
    by_item: Vec<Vec<usize>>,
    by_worker: Vec<Vec<usize>>,
}

impl GradeMatrix {
    pub fn new(n_items: usize, n_workers: usize, grades: Vec<Grade>) -> Result<Self> {
        let mut by_item = vec![Vec::new(); n_items];
        let mut by_worker = vec![Vec::new(); n_workers];
        for (k, g) in grades.iter().enumerate() {
            if g.item >= n_items || g.worker >= n_workers {
                return Err(Error::invalid(format!(
                    "grade ({}, {}) outside a {n_items} x {n_workers} matrix",
                    g.item, g.worker
                )));
            }
            if !(GRADE_MIN..=GRADE_MAX).contains(&g.value) {
                return Err(Error::invalid(format!(
                    "grade {} outside [{GRADE_MIN}, {GRADE_MAX}]",
                    g.value
                )));
            }
            by_item[g.item].push(k);
            by_worker[g.worker].push(k);
        }
        Ok(GradeMatrix {
            n_items,
            n_workers,
            grades,
            by_item,
            by_worker,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn grades(&self) -> &[Grade] {
        &self.grades
    }

    fn require_grades(&self) -> Result<()> {
        match self.by_item.iter().position(Vec::is_empty) {
            Some(i) => Err(Error::invalid(format!("item {i} has no grades"))),
            None => Ok(()),
        }
    }

    fn means(&self) -> Vec<f64> {
        self.by_item
            .iter()
            .map(|ks| ks.iter().map(|&k| self.grades[k].value).sum::<f64>() / ks.len() as f64)
            .collect()
    }
}

/// Half-up rounding to an integer grade in `[0, 10]`.
pub fn round_grade(x: f64) -> usize {
    (x + 0.5).floor().clamp(GRADE_MIN, GRADE_MAX) as usize
}

/// Mean grade per item, rounded half-up.
pub fn average_grade(g: &GradeMatrix) -> Result<Vec<usize>> {
    g.require_grades()?;
    Ok(g.means().into_iter().map(round_grade).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradeEstimate {
    pub grades: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GradeEstimate {
    pub fn rounded(&self) -> Vec<usize> {
        self.grades.iter().map(|&x| round_grade(x)).collect()
    }
}

/// Variance-weighted grade aggregation.
///
/// Starting from plain means, each round sets every worker's variance to
/// the mean squared deviation of their grades from the current estimates
/// (floored at `var_floor`), then re-estimates each item as the
/// inverse-variance weighted mean of its grades.
pub fn em_grades(g: &GradeMatrix, iters: usize, var_floor: f64) -> Result<GradeEstimate> {
    if iters < 1 {
        return Err(Error::invalid("grade EM needs at least one iteration"));
    }
    if var_floor.is_nan() || var_floor <= 0.0 {
        return Err(Error::invalid("variance floor must be positive"));
    }
    g.require_grades()?;
    let mut est = g.means();
    let mut var = vec![var_floor; g.n_workers];
    for _ in 0..iters {
        for (j, vj) in var.iter_mut().enumerate() {
            let ks = &g.by_worker[j];
            *vj = if ks.is_empty() {
                var_floor
            } else {
                let msd = ks
                    .iter()
                    .map(|&k| {
                        let d = g.grades[k].value - est[g.grades[k].item];
                        d * d
                    })
                    .sum::<f64>()
                    / ks.len() as f64;
                msd.max(var_floor)
            };
        }
        for (i, e) in est.iter_mut().enumerate() {
            let (num, den) = g.by_item[i].iter().fold((0.0, 0.0), |(n, d), &k| {
                let w = 1.0 / var[g.grades[k].worker];
                (n + w * g.grades[k].value, d + w)
            });
            *e = num / den;
        }
    }
    Ok(GradeEstimate {
        grades: est,
        variances: var,
    })
}

/// Draws `n` labels i.i.d. from the empirical class distribution of
/// `train`.
pub fn proportional_guess(train: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::invalid("proportional guess needs training labels"));
    }
    let classes = train.iter().max().copied().unwrap_or(0) + 1;
    let mut counts = vec![0u64; classes];
    for &c in train {
        counts[c] += 1;
    }
    let dist = WeightedIndex::new(&counts).expect("at least one positive count");
    let mut rng = seed::stream(seed, seed::BASELINE);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}
