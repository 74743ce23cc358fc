//! Cross-frame query matching: exact Hungarian assignment plus the three
//! association strategies (adjacent, long-term, temporal top-K with a
//! memory bank of permuted query embeddings).
//!
//! A memory-bank slot index denotes one instance identity across frames.
//! `step` reindexes each frame's queries so that slot order is preserved,
//! then stores the permuted embeddings for future frames to match against.

mod hungarian;

pub use hungarian::hungarian;

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// N x N matrix of `1 - cosine` matching costs; entries lie in [0, 2].
pub type CostMap = Tensor<f32>;

/// A permutation mapping current-frame query `n` to memory slot `ids(n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    ids: Vec<usize>,
}

impl Assignment {
    /// Validates that `ids` is a bijection on `{0..n-1}`.
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        let n = ids.len();
        let mut seen = vec![false; n];
        for &j in &ids {
            if j >= n || seen[j] {
                return Err(Error::input(format!(
                    "assignment ids are not a permutation of 0..{n}"
                )));
            }
            seen[j] = true;
        }
        Ok(Assignment { ids })
    }

    pub fn identity(n: usize) -> Self {
        Assignment {
            ids: (0..n).collect(),
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Memory slot that query `n` maps to.
    pub fn slot_of(&self, query: usize) -> usize {
        self.ids[query]
    }

    /// Reorders the first axis so that input row `n` lands in output row
    /// `ids(n)`; afterwards slot index = instance identity.
    pub fn permute_rows<T: num_traits::Float + Send + Sync>(
        &self,
        t: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let n = self.ids.len();
        if t.shape()[0] != n {
            return Err(Error::shape(format!(
                "cannot permute first axis of length {} with {n} ids",
                t.shape()[0]
            )));
        }
        let stride = t.len() / n;
        let mut out = vec![T::zero(); t.len()];
        for (row, &slot) in self.ids.iter().enumerate() {
            out[slot * stride..(slot + 1) * stride]
                .copy_from_slice(&t.data()[row * stride..(row + 1) * stride]);
        }
        Tensor::new(t.shape().to_vec(), out)
    }
}

/// Matching cost between current queries and one stored frame:
/// `1 - cosine`, clamped into [0, 2] against rounding.
pub fn cost_map(cur: &Tensor<f32>, past: &Tensor<f32>) -> Result<CostMap> {
    let (n1, d1) = cur.dims2()?;
    let (n2, d2) = past.dims2()?;
    if n1 != n2 || d1 != d2 {
        return Err(Error::shape(format!(
            "cost map needs equal query matrices, got {n1}x{d1} vs {n2}x{d2}"
        )));
    }
    let cos = cur.cosine_rows(past)?;
    Ok(cos.map(|c| (1.0 - c).clamp(0.0, 2.0)))
}

/// Frame-level cost: the sum of matched-pair costs under `a`.
pub fn frame_cost(cost: &CostMap, a: &Assignment) -> Result<f64> {
    let (n, m) = cost.dims2()?;
    if n != m || a.len() != n {
        return Err(Error::input(format!(
            "frame cost needs a square map matching the assignment, got {n}x{m} with {} ids",
            a.len()
        )));
    }
    let mut s = 0.0f64;
    for (i, &j) in a.ids().iter().enumerate() {
        s += cost.at2(i, j) as f64;
    }
    Ok(s)
}

/// Ordered store of the last `capacity` permuted query-embedding matrices,
/// most recent first, plus a running mean used by long-term matching.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    capacity: usize,
    entries: Vec<Tensor<f32>>,
    agg_sum: Option<Tensor<f64>>,
    agg_count: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::input("memory bank capacity must be >= 1".to_string()));
        }
        Ok(MemoryBank {
            capacity,
            entries: Vec::new(),
            agg_sum: None,
            agg_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored matrices, most recent first.
    pub fn entries(&self) -> &[Tensor<f32>] {
        &self.entries
    }

    pub fn most_recent(&self) -> Option<&Tensor<f32>> {
        self.entries.first()
    }

    /// Pushes permuted embeddings to the front, evicting the oldest entry
    /// past capacity. The running mean keeps every frame ever pushed.
    pub fn push(&mut self, permuted: Tensor<f32>) -> Result<()> {
        let (n, d) = permuted.dims2()?;
        if let Some(first) = self.entries.first() {
            let (n0, d0) = first.dims2()?;
            if n0 != n || d0 != d {
                return Err(Error::input(format!(
                    "query matrix changed from {n0}x{d0} to {n}x{d} mid-video"
                )));
            }
        }
        match &mut self.agg_sum {
            Some(sum) => {
                for (acc, &x) in sum.data_mut().iter_mut().zip(permuted.data()) {
                    *acc += x as f64;
                }
            }
            None => self.agg_sum = Some(permuted.to_f64()),
        }
        self.agg_count += 1;
        self.entries.insert(0, permuted);
        self.entries.truncate(self.capacity);
        Ok(())
    }

    /// Arithmetic mean of every permuted matrix ever pushed.
    pub fn running_mean(&self) -> Option<Tensor<f32>> {
        let sum = self.agg_sum.as_ref()?;
        let k = self.agg_count as f64;
        Some(sum.map(|x| x / k).to_f32())
    }
}

/// Cross-frame association strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Match against the single most recent frame.
    Adjacent,
    /// Match against the running mean of all previous permuted embeddings.
    LongTerm,
    /// Match against the mean cost map of the `k` best of the last
    /// `memory` frames.
    TopK { memory: usize, k: usize },
}

impl Strategy {
    pub fn top_k(memory: usize, k: usize) -> Result<Self> {
        if memory == 0 || k == 0 || k > memory {
            return Err(Error::input(format!(
                "top-K requires 1 <= K <= T, got T={memory} K={k}"
            )));
        }
        Ok(Strategy::TopK { memory, k })
    }

    /// How many stored frames the strategy needs.
    pub fn bank_capacity(&self) -> usize {
        match self {
            Strategy::Adjacent | Strategy::LongTerm => 1,
            Strategy::TopK { memory, .. } => *memory,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Adjacent => "adjacent",
            Strategy::LongTerm => "longterm",
            Strategy::TopK { .. } => "topk",
        }
    }
}

/// Temporal top-K matching against a nonempty bank.
///
/// Per stored frame: cost map, Hungarian assignment, frame-level cost. The
/// `k` frames with smallest cost are selected (ties prefer the more recent
/// frame), their cost maps averaged, and a final Hungarian solve on the
/// mean yields the assignment. When fewer than `k` frames are stored, all
/// of them are used.
pub fn match_topk(
    cur: &Tensor<f32>,
    bank: &MemoryBank,
    k: usize,
) -> Result<(Assignment, CostMap)> {
    if bank.is_empty() {
        return Err(Error::input(
            "top-K matching needs a nonempty memory bank".to_string(),
        ));
    }
    if k == 0 {
        return Err(Error::input("top-K requires K >= 1".to_string()));
    }
    let per_frame: Vec<Result<(CostMap, f64)>> = par::map_collect(bank.entries(), |entry| {
        let map = cost_map(cur, entry)?;
        let ids = hungarian(&map)?;
        let s = frame_cost(&map, &ids)?;
        Ok((map, s))
    });
    let per_frame: Vec<(CostMap, f64)> = per_frame.into_iter().collect::<Result<_>>()?;

    let effective_k = k.min(per_frame.len());
    let mut order: Vec<usize> = (0..per_frame.len()).collect();
    // Bank index 0 is the most recent frame, so ascending index is the
    // documented recency tie-break.
    order.sort_by(|&a, &b| {
        per_frame[a]
            .1
            .partial_cmp(&per_frame[b].1)
            .expect("frame costs are finite")
            .then(a.cmp(&b))
    });
    let selected: BTreeSet<usize> = order[..effective_k].iter().copied().collect();

    let (n, _) = cur.dims2()?;
    let mut mean = vec![0.0f64; n * n];
    for idx in &selected {
        for (acc, &c) in mean.iter_mut().zip(per_frame[*idx].0.data()) {
            *acc += c as f64;
        }
    }
    let inv = 1.0 / effective_k as f64;
    let mean_map = Tensor::new(vec![n, n], mean.iter().map(|&x| (x * inv) as f32).collect())?;
    let ids = hungarian(&mean_map)?;
    Ok((ids, mean_map))
}

/// Output of one tracking step: the assignment and the slot-ordered
/// (permuted) query embeddings that were pushed into the bank.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub assignment: Assignment,
    pub permuted: Tensor<f32>,
}

/// Per-video matching state: one strategy, one memory bank.
///
/// Single-writer: a tracker steps through one video sequentially. Distinct
/// videos use distinct trackers and may run on distinct threads.
#[derive(Debug, Clone)]
pub struct Tracker {
    strategy: Strategy,
    bank: MemoryBank,
}

impl Tracker {
    pub fn new(strategy: Strategy) -> Result<Self> {
        if let Strategy::TopK { memory, k } = strategy {
            Strategy::top_k(memory, k)?;
        }
        Ok(Tracker {
            bank: MemoryBank::new(strategy.bank_capacity())?,
            strategy,
        })
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    /// Associates the current frame's queries with stored identities.
    ///
    /// The first frame gets the identity assignment. The permuted
    /// embeddings are pushed into the bank before returning.
    pub fn step(&mut self, cur: &Tensor<f32>) -> Result<StepResult> {
        let (n, _) = cur.dims2()?;
        let assignment = if self.bank.is_empty() {
            Assignment::identity(n)
        } else {
            match self.strategy {
                Strategy::Adjacent => {
                    let past = self.bank.most_recent().expect("bank nonempty");
                    hungarian(&cost_map(cur, past)?)?
                }
                Strategy::LongTerm => {
                    let mean = self.bank.running_mean().expect("bank nonempty");
                    hungarian(&cost_map(cur, &mean)?)?
                }
                Strategy::TopK { k, .. } => match_topk(cur, &self.bank, k)?.0,
            }
        };
        let permuted = assignment.permute_rows(cur)?;
        self.bank.push(permuted.clone())?;
        Ok(StepResult {
            assignment,
            permuted,
        })
    }
}
