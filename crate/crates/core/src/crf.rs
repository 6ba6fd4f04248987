//! Linear-chain CRF over the per-slot `{B, I, O}` tagset.
//!
//! Emission scores are `[3, T]` matrices (row = label, column = token).
//! Transition scores are indexed `[from, to]`. With the structural mask on,
//! `O → I` and `start → I` carry `-inf`, which the dynamic programs treat as
//! forbidden paths; those entries receive exactly zero gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, CustomOp, Scalar, Tape, Tensor, Var};

pub const NUM_TAGS: usize = 3;
const MAX_BRUTE_FORCE_LEN: usize = 10;

/// Ordered so that ties break toward `B`, then `I`, then `O`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::B, Tag::I, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::B => "B",
            Tag::I => "I",
            Tag::O => "O",
        };
        f.write_str(s)
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" => Ok(Tag::B),
            "I" => Ok(Tag::I),
            "O" => Ok(Tag::O),
            other => Err(Error::InvalidTags(format!("unknown tag {other:?}"))),
        }
    }
}

/// Per-token labels for one slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn new(tags: Vec<Tag>) -> Self {
        Self(tags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.index()).collect()
    }

    /// Position of the first `I` that starts the sequence or follows an `O`.
    pub fn first_invalid(&self) -> Option<usize> {
        let mut prev = Tag::O;
        for (i, &t) in self.0.iter().enumerate() {
            if t == Tag::I && prev == Tag::O {
                return Some(i);
            }
            prev = t;
        }
        None
    }

    pub fn is_valid(&self) -> bool {
        self.first_invalid().is_none()
    }

    /// Rewrites every orphan `I` as `B`.
    pub fn repaired(&self) -> Self {
        let mut out = self.0.clone();
        let mut prev = Tag::O;
        for t in out.iter_mut() {
            if *t == Tag::I && prev == Tag::O {
                *t = Tag::B;
            }
            prev = *t;
        }
        Self(out)
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TagSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split_whitespace().map(Tag::from_str).collect::<Result<Vec<_>>>().map(Self)
    }
}

/// Transition, start and end scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<T> {
    pub transitions: Tensor<T>,
    pub start: Tensor<T>,
    pub end: Tensor<T>,
}

impl<T: Scalar> CrfParams<T> {
    pub fn zeros() -> Self {
        Self {
            transitions: Tensor::zeros(&[NUM_TAGS, NUM_TAGS]),
            start: Tensor::zeros(&[NUM_TAGS]),
            end: Tensor::zeros(&[NUM_TAGS]),
        }
    }

    /// Zero scores with the structural mask applied.
    pub fn masked() -> Self {
        let mut p = Self::zeros();
        p.apply_mask();
        p
    }

    /// Forbids `O → I` and `start → I`.
    pub fn apply_mask(&mut self) {
        self.transitions.set(Tag::O.index(), Tag::I.index(), T::neg_infinity());
        self.start.data_mut()[Tag::I.index()] = T::neg_infinity();
    }

    fn view(&self) -> Potentials<'_, T> {
        Potentials { trans: self.transitions.data(), start: self.start.data(), end: self.end.data() }
    }
}

#[derive(Clone, Copy)]
struct Potentials<'a, T> {
    trans: &'a [T],
    start: &'a [T],
    end: &'a [T],
}

// Dynamic programs over the tag lattice index several tables by tag.
#[allow(clippy::needless_range_loop)]
impl<'a, T: Scalar> Potentials<'a, T> {
    fn from_tensors(trans: &'a Tensor<T>, start: &'a Tensor<T>, end: &'a Tensor<T>) -> Result<Self> {
        if trans.shape() != [NUM_TAGS, NUM_TAGS] || start.len() != NUM_TAGS || end.len() != NUM_TAGS {
            return Err(Error::Shape(format!(
                "crf potentials {:?} / {:?} / {:?}",
                trans.shape(),
                start.shape(),
                end.shape()
            )));
        }
        Ok(Self { trans: trans.data(), start: start.data(), end: end.data() })
    }

    #[inline]
    fn tr(&self, from: usize, to: usize) -> T {
        self.trans[from * NUM_TAGS + to]
    }

    fn score(&self, u: &Tensor<T>, y: &[usize]) -> T {
        let n = y.len();
        let mut s = self.start[y[0]] + self.end[y[n - 1]];
        for (t, &label) in y.iter().enumerate() {
            s += u.at(label, t);
            if t + 1 < n {
                s += self.tr(label, y[t + 1]);
            }
        }
        s
    }

    /// Forward log-potentials `alpha[t][y]`.
    fn alphas(&self, u: &Tensor<T>) -> Vec<[T; NUM_TAGS]> {
        let n = u.cols();
        let mut alpha = Vec::with_capacity(n);
        let mut a = [T::zero(); NUM_TAGS];
        for (y, slot) in a.iter_mut().enumerate() {
            *slot = self.start[y] + u.at(y, 0);
        }
        alpha.push(a);
        for t in 1..n {
            let prev = alpha[t - 1];
            let mut a = [T::zero(); NUM_TAGS];
            for (y, slot) in a.iter_mut().enumerate() {
                *slot = u.at(y, t) + log_sum_exp((0..NUM_TAGS).map(|p| prev[p] + self.tr(p, y)));
            }
            alpha.push(a);
        }
        alpha
    }

    /// Backward log-potentials `beta[t][y]` (including end scores).
    fn betas(&self, u: &Tensor<T>) -> Vec<[T; NUM_TAGS]> {
        let n = u.cols();
        let mut beta = vec![[T::zero(); NUM_TAGS]; n];
        beta[n - 1].copy_from_slice(self.end);
        for t in (0..n - 1).rev() {
            let next = beta[t + 1];
            for y in 0..NUM_TAGS {
                beta[t][y] = log_sum_exp((0..NUM_TAGS).map(|q| self.tr(y, q) + u.at(q, t + 1) + next[q]));
            }
        }
        beta
    }

    fn log_partition(&self, u: &Tensor<T>) -> T {
        let alpha = self.alphas(u);
        let last = alpha[alpha.len() - 1];
        log_sum_exp((0..NUM_TAGS).map(|y| last[y] + self.end[y]))
    }

    /// Node marginals `[3, T]`, expected transition counts `[3, 3]` and `log Z`.
    fn marginals(&self, u: &Tensor<T>) -> (Tensor<T>, Tensor<T>, T) {
        let n = u.cols();
        let alpha = self.alphas(u);
        let beta = self.betas(u);
        let log_z = log_sum_exp((0..NUM_TAGS).map(|y| alpha[n - 1][y] + self.end[y]));
        let mut unary = Tensor::zeros(&[NUM_TAGS, n]);
        for t in 0..n {
            for y in 0..NUM_TAGS {
                unary.set(y, t, (alpha[t][y] + beta[t][y] - log_z).exp());
            }
        }
        let mut pair = Tensor::zeros(&[NUM_TAGS, NUM_TAGS]);
        for t in 0..n.saturating_sub(1) {
            for p in 0..NUM_TAGS {
                for q in 0..NUM_TAGS {
                    let lp = alpha[t][p] + self.tr(p, q) + u.at(q, t + 1) + beta[t + 1][q] - log_z;
                    let cur = pair.at(p, q);
                    pair.set(p, q, cur + lp.exp());
                }
            }
        }
        (unary, pair, log_z)
    }

    fn viterbi(&self, u: &Tensor<T>) -> (Vec<usize>, T) {
        let n = u.cols();
        let mut delta = [T::zero(); NUM_TAGS];
        for (y, d) in delta.iter_mut().enumerate() {
            *d = self.start[y] + u.at(y, 0);
        }
        let mut back = vec![[0usize; NUM_TAGS]; n];
        for (t, bp) in back.iter_mut().enumerate().skip(1) {
            let mut next = [T::zero(); NUM_TAGS];
            for y in 0..NUM_TAGS {
                let mut best = 0;
                let mut best_score = delta[0] + self.tr(0, y);
                for p in 1..NUM_TAGS {
                    let s = delta[p] + self.tr(p, y);
                    if s > best_score {
                        best = p;
                        best_score = s;
                    }
                }
                bp[y] = best;
                next[y] = best_score + u.at(y, t);
            }
            delta = next;
        }
        let mut last = 0;
        let mut best = delta[0] + self.end[0];
        for y in 1..NUM_TAGS {
            let s = delta[y] + self.end[y];
            if s > best {
                best = s;
                last = y;
            }
        }
        let mut path = vec![last; n];
        for t in (1..n).rev() {
            path[t - 1] = back[t][path[t]];
        }
        (path, best)
    }
}

fn check_emissions<T: Scalar>(u: &Tensor<T>) -> Result<()> {
    if u.shape().len() != 2 || u.rows() != NUM_TAGS {
        return Err(Error::Shape(format!("emission scores must be [3, T], got {:?}", u.shape())));
    }
    Ok(())
}

fn check_lengths<T: Scalar>(u: &Tensor<T>, y: &TagSequence) -> Result<()> {
    check_emissions(u)?;
    if u.cols() != y.len() {
        return Err(Error::Shape(format!("{} tags for {} tokens", y.len(), u.cols())));
    }
    Ok(())
}

/// `start[y₁] + Σ U[yₜ, t] + Σ trans[yₜ, yₜ₊₁] + end[y_T]`.
pub fn sequence_score<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>, y: &TagSequence) -> Result<T> {
    check_lengths(u, y)?;
    Ok(crf.view().score(u, &y.indices()))
}

/// `log Σ_y exp(score(y))` by the forward recursion.
pub fn log_partition<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>) -> Result<T> {
    check_emissions(u)?;
    Ok(crf.view().log_partition(u))
}

/// Per-position label marginals `[3, T]`.
pub fn marginals<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>) -> Result<Tensor<T>> {
    check_emissions(u)?;
    Ok(crf.view().marginals(u).0)
}

/// Negative log-likelihood of a structurally valid gold sequence.
pub fn nll<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>, gold: &TagSequence) -> Result<T> {
    check_lengths(u, gold)?;
    if let Some(i) = gold.first_invalid() {
        return Err(Error::InvalidTags(format!("orphan I at position {i} in gold \"{gold}\"")));
    }
    let view = crf.view();
    Ok(view.log_partition(u) - view.score(u, &gold.indices()))
}

/// Highest-scoring sequence; ties prefer the lower label (B < I < O) at each backpointer.
pub fn viterbi_decode<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>) -> Result<(TagSequence, T)> {
    check_emissions(u)?;
    let (path, score) = crf.view().viterbi(u);
    Ok((TagSequence(path.into_iter().map(|i| Tag::ALL[i]).collect()), score))
}

fn enumerate_sequences(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut y = vec![0usize; n];
    loop {
        visit(&y);
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            y[k] += 1;
            if y[k] < NUM_TAGS {
                break;
            }
            y[k] = 0;
        }
    }
}

fn brute_force_guard<T: Scalar>(u: &Tensor<T>) -> Result<()> {
    check_emissions(u)?;
    if u.cols() > MAX_BRUTE_FORCE_LEN {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to {MAX_BRUTE_FORCE_LEN} tokens, got {}",
            u.cols()
        )));
    }
    Ok(())
}

/// Exhaustive arg-max over all `3^T` sequences (test oracle).
pub fn brute_force_decode<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>) -> Result<(TagSequence, T)> {
    brute_force_guard(u)?;
    let view = crf.view();
    let mut best: Option<(Vec<usize>, T)> = None;
    enumerate_sequences(u.cols(), |y| {
        let s = view.score(u, y);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((y.to_vec(), s));
        }
    });
    let (y, s) = best.expect("at least one sequence");
    Ok((TagSequence(y.into_iter().map(|i| Tag::ALL[i]).collect()), s))
}

/// Exhaustive `log Z` over all `3^T` sequences (test oracle).
pub fn brute_force_log_partition<T: Scalar>(u: &Tensor<T>, crf: &CrfParams<T>) -> Result<T> {
    brute_force_guard(u)?;
    let view = crf.view();
    let mut scores = Vec::new();
    enumerate_sequences(u.cols(), |y| scores.push(view.score(u, y)));
    Ok(log_sum_exp(scores))
}

/// Independent per-token arg-max with orphan-`I` repair (the no-CRF decoder).
pub fn greedy_decode<T: Scalar>(u: &Tensor<T>) -> Result<TagSequence> {
    check_emissions(u)?;
    let tags = (0..u.cols())
        .map(|t| {
            let mut best = 0;
            for y in 1..NUM_TAGS {
                if u.at(y, t) > u.at(best, t) {
                    best = y;
                }
            }
            Tag::ALL[best]
        })
        .collect();
    Ok(TagSequence(tags).repaired())
}

struct CrfNllOp {
    gold: Vec<usize>,
}

impl<T: Scalar> CustomOp<T> for CrfNllOp {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (u, trans, start, end) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let view = Potentials::from_tensors(trans, start, end).expect("shapes checked at record time");
        let (mut d_u, mut d_trans, _) = view.marginals(u);
        let n = u.cols();
        let mut d_start = Tensor::zeros(&[NUM_TAGS]);
        let mut d_end = Tensor::zeros(&[NUM_TAGS]);
        for y in 0..NUM_TAGS {
            d_start.data_mut()[y] = d_u.at(y, 0);
            d_end.data_mut()[y] = d_u.at(y, n - 1);
        }
        for (t, &y) in self.gold.iter().enumerate() {
            let cur = d_u.at(y, t);
            d_u.set(y, t, cur - T::one());
            if t + 1 < n {
                let next = self.gold[t + 1];
                let cur = d_trans.at(y, next);
                d_trans.set(y, next, cur - T::one());
            }
        }
        d_start.data_mut()[self.gold[0]] -= T::one();
        d_end.data_mut()[self.gold[n - 1]] -= T::one();
        let g = grad.data()[0];
        let mut out = [d_u, d_trans, d_start, d_end];
        for t in &mut out {
            t.scale_assign(g);
        }
        out.into_iter().map(Some).collect()
    }
}

/// Records the CRF negative log-likelihood on a tape; gradients flow to the
/// emissions and all three potential tensors.
pub fn nll_on_tape<T: Scalar>(
    tape: &mut Tape<'_, T>,
    emissions: Var,
    transitions: Var,
    start: Var,
    end: Var,
    gold: &TagSequence,
) -> Result<Var> {
    let u = tape.value(emissions);
    check_lengths(u, gold)?;
    if let Some(i) = gold.first_invalid() {
        return Err(Error::InvalidTags(format!("orphan I at position {i} in gold \"{gold}\"")));
    }
    let view = Potentials::from_tensors(tape.value(transitions), tape.value(start), tape.value(end))?;
    let y = gold.indices();
    let value = view.log_partition(u) - view.score(u, &y);
    let op = Box::new(CrfNllOp { gold: y });
    Ok(tape.custom(&[emissions, transitions, start, end], Tensor::scalar(value), op))
}
