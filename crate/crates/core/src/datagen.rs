//! Synthetic spammer-hammer crowdsourcing data.
//!
//! Items carry a hidden `±1` label. Users are reliable ("hammers", always
//! vote the true label) or unreliable ("spammers", vote `±1` uniformly).
//! Each item collects a fixed number of votes from distinct users.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{label_to_class, Vote, VoteMatrix};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{LabeledDataset, Target};
use crate::seed::{self, Rng as SeedRng};

/// Observable user bit correlated with reliability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorSpec {
    pub p_true_given_reliable: f64,
    pub p_true_given_unreliable: f64,
}

impl Default for IndicatorSpec {
    fn default() -> Self {
        IndicatorSpec {
            p_true_given_reliable: 0.9,
            p_true_given_unreliable: 0.4,
        }
    }
}

/// How voters are drawn for each item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Random bipartite graph where every user casts either
    /// `⌊items·votes/users⌋` or one more vote.
    #[default]
    Balanced,
    /// Independent uniform draw of distinct users per item.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_items: usize,
    pub n_users: usize,
    pub p_reliable: f64,
    pub votes_per_item: usize,
    /// Probability that an item's true label is `+1`.
    pub class_balance: f64,
    pub assignment: Assignment,
    pub indicator: Option<IndicatorSpec>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_items: 3000,
            n_users: 3000,
            p_reliable: 0.6,
            votes_per_item: 3,
            class_balance: 0.5,
            assignment: Assignment::Balanced,
            indicator: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut probs = vec![("p_reliable", self.p_reliable), ("class_balance", self.class_balance)];
        if let Some(ind) = &self.indicator {
            probs.push(("p_true_given_reliable", ind.p_true_given_reliable));
            probs.push(("p_true_given_unreliable", ind.p_true_given_unreliable));
        }
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_items == 0 || self.n_users == 0 || self.votes_per_item == 0 {
            return Err(Error::invalid("item, user and vote counts must be positive"));
        }
        if self.votes_per_item > self.n_users {
            return Err(Error::invalid(format!(
                "{} votes per item but only {} users",
                self.votes_per_item, self.n_users
            )));
        }
        Ok(())
    }

    /// Edge feature width: the vote, plus the indicator when enabled.
    pub fn feature_width(&self) -> usize {
        1 + usize::from(self.indicator.is_some())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub labels: Vec<i8>,
    pub reliable: Vec<bool>,
    pub indicator: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    /// Items `i0…` then users `u0…`; one `item → user` edge per vote with
    /// features `[vote]` or `[vote, indicator]`, both encoded as `±1`.
    pub graph: Graph,
    pub votes: VoteMatrix,
    pub truth: SynthTruth,
    /// Every item, labeled with class `0` for `-1` and `1` for `+1`.
    pub dataset: LabeledDataset,
}

impl SynthData {
    pub fn item_node(&self, item: usize) -> NodeId {
        NodeId(item)
    }

    pub fn user_node(&self, user: usize) -> NodeId {
        NodeId(self.truth.labels.len() + user)
    }
}

fn substream(spec: &SynthSpec, name: &str) -> SeedRng {
    seed::stream(seed::derive(spec.seed, seed::DATA), name)
}

pub fn gen_spammer_hammer(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (n, m, l) = (spec.n_items, spec.n_users, spec.votes_per_item);

    let mut rng = substream(spec, "labels");
    let labels: Vec<i8> = (0..n)
        .map(|_| if rng.random_bool(spec.class_balance) { 1 } else { -1 })
        .collect();

    let mut rng = substream(spec, "users");
    let reliable: Vec<bool> = (0..m).map(|_| rng.random_bool(spec.p_reliable)).collect();
    let indicator = spec.indicator.map(|ind| {
        let mut rng = substream(spec, "indicator");
        reliable
            .iter()
            .map(|&r| {
                let p = if r {
                    ind.p_true_given_reliable
                } else {
                    ind.p_true_given_unreliable
                };
                rng.random_bool(p)
            })
            .collect::<Vec<bool>>()
    });

    let mut rng = substream(spec, "assignment");
    let voters = match spec.assignment {
        Assignment::Uniform => (0..n)
            .map(|_| index::sample(&mut rng, m, l).into_vec())
            .collect(),
        Assignment::Balanced => balanced_assignment(n, m, l, &mut rng)?,
    };

    let mut rng = substream(spec, "votes");
    let mut graph = Graph::new(spec.feature_width());
    for i in 0..n {
        graph.add_node(&format!("i{i}"));
    }
    for j in 0..m {
        graph.add_node(&format!("u{j}"));
    }
    let mut votes = Vec::with_capacity(n * l);
    for (i, users) in voters.iter().enumerate() {
        for &j in users {
            let value = if reliable[j] {
                labels[i]
            } else if rng.random_bool(0.5) {
                1
            } else {
                -1
            };
            let mut features = vec![f64::from(value)];
            if let Some(ind) = &indicator {
                features.push(if ind[j] { 1.0 } else { -1.0 });
            }
            graph.add_edge(NodeId(i), NodeId(n + j), features)?;
            votes.push(Vote { item: i, worker: j, value });
        }
    }
    let dataset = LabeledDataset {
        examples: labels
            .iter()
            .enumerate()
            .map(|(i, &y)| (NodeId(i), Target::Class(label_to_class(y))))
            .collect(),
        classes: Some(2),
    };
    Ok(SynthData {
        graph,
        votes: VoteMatrix::new(n, m, votes)?,
        truth: SynthTruth {
            labels,
            reliable,
            indicator,
        },
        dataset,
    })
}

/// Deals `l` distinct users to each of `n` items so that user degrees
/// differ by at most one. Stubs are shuffled, dealt in blocks of `l`, and
/// duplicate users within a block are repaired by random swaps.
fn balanced_assignment(n: usize, m: usize, l: usize, rng: &mut SeedRng) -> Result<Vec<Vec<usize>>> {
    if l == m {
        return Ok(vec![(0..m).collect(); n]);
    }
    let total = n * l;
    let mut extra: Vec<usize> = (0..m).collect();
    extra.shuffle(rng);
    let mut stubs: Vec<usize> = Vec::with_capacity(total);
    for j in 0..m {
        stubs.extend(std::iter::repeat_n(j, total / m));
    }
    stubs.extend(extra.into_iter().take(total % m));
    stubs.shuffle(rng);

    let block_has = |stubs: &[usize], block: usize, user: usize, skip: usize| {
        (block * l..(block + 1) * l).any(|q| q != skip && stubs[q] == user)
    };
    let max_tries = 1000 * total.max(1);
    let mut tries = 0;
    for p in 0..total {
        let b = p / l;
        while block_has(&stubs, b, stubs[p], p) {
            tries += 1;
            if tries > max_tries {
                return Err(Error::invalid("could not build a balanced vote assignment"));
            }
            let q = rng.random_range(0..total);
            let bq = q / l;
            if bq == b {
                continue;
            }
            let (up, uq) = (stubs[p], stubs[q]);
            if !block_has(&stubs, b, uq, p) && !block_has(&stubs, bq, up, q) {
                stubs.swap(p, q);
            }
        }
    }
    Ok(stubs.chunks(l).map(<[usize]>::to_vec).collect())
}

/// Seeded split of `ds` into `n_train` training examples and the rest.
pub fn split_items(ds: &LabeledDataset, n_train: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_train >= ds.len() {
        return Err(Error::invalid(format!(
            "cannot train on {n_train} of {} examples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut seed::stream(seed, seed::SPLIT));
    Ok((ds.subset(&order[..n_train]), ds.subset(&order[n_train..])))
}

/// Checks that every item has `l` distinct voters.
pub fn distinct_voters(data: &SynthData) -> bool {
    (0..data.votes.n_items()).all(|i| {
        let ks = data.votes.item_votes(i);
        let set: HashSet<usize> = ks.iter().map(|&k| data.votes.votes()[k].worker).collect();
        set.len() == ks.len()
    })
}
