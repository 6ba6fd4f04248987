//! Recurrent and attention layers: packed bidirectional LSTMs, description
//! attention, and the feedforward emission head.
//!
//! Sequences are packed column-wise: a batch of sequences with lengths
//! `lens` is one `[D, Σ lens]` matrix, each sequence occupying a contiguous
//! block of columns. The LSTM recurrence runs all sequences in lock-step so
//! the recurrent product is one matrix-matrix multiply per time step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm_nn, gemm_nt, gemm_tn, sigmoid, xavier_uniform, Binding, CustomOp, ParamId, SeededRng, Var};
use crate::{ParamSet, Real, Tape, Tensor};

/// Weights of one LSTM direction. Gate blocks are ordered input, forget,
/// output, candidate.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), xavier_uniform(&[4 * hidden, input], rng)?);
        let u = params.add(format!("{prefix}.u"), xavier_uniform(&[4 * hidden, hidden], rng)?);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = params.add(format!("{prefix}.b"), bias);
        Ok(Self { w, u, b, hidden })
    }

    /// Runs the cell over packed sequences; `[D, N]` in, `[H, N]` out.
    pub fn run(&self, tape: &mut Tape<'_>, bind: &Binding, x: Var, lens: &[usize], reverse: bool) -> Result<Var> {
        let p = tape.matmul(bind.var(self.w), x)?;
        let p = tape.add_col_broadcast(p, bind.var(self.b))?;
        lstm_recurrence(tape, p, bind.var(self.u), lens, reverse)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let fwd = LstmCell::new(params, &format!("{prefix}.fwd"), input, hidden, rng)?;
        let bwd = LstmCell::new(params, &format!("{prefix}.bwd"), input, hidden, rng)?;
        Ok(Self { fwd, bwd })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// Forward states stacked above backward states: `[2H, N]`.
    pub fn encode(&self, tape: &mut Tape<'_>, bind: &Binding, x: Var, lens: &[usize]) -> Result<Var> {
        let f = self.fwd.run(tape, bind, x, lens, false)?;
        let b = self.bwd.run(tape, bind, x, lens, true)?;
        tape.concat_rows(&[f, b])
    }
}

fn check_lens(lens: &[usize], n: usize) -> Result<()> {
    if lens.is_empty() || lens.contains(&0) || lens.iter().sum::<usize>() != n {
        return Err(Error::Shape(format!("sequence lengths {lens:?} do not pack {n} columns")));
    }
    Ok(())
}

/// Column of step `t` of a sequence at `offset` with length `len`.
#[inline]
fn step_col(offset: usize, len: usize, t: usize, reverse: bool) -> usize {
    if reverse {
        offset + len - 1 - t
    } else {
        offset + t
    }
}

/// Recurrent part of an LSTM over packed, pre-projected inputs
/// `p = W·x + b` (`[4H, N]`). Zero initial state per sequence.
pub fn lstm_recurrence(tape: &mut Tape<'_>, p: Var, u: Var, lens: &[usize], reverse: bool) -> Result<Var> {
    let pv = tape.value(p);
    let uv = tape.value(u);
    let h = uv.cols();
    if uv.rows() != 4 * h || pv.rows() != 4 * h {
        return Err(Error::Shape(format!("lstm: projected {:?}, recurrent {:?}", pv.shape(), uv.shape())));
    }
    let n = pv.cols();
    check_lens(lens, n)?;
    let offsets = offsets(lens);
    let max_len = *lens.iter().max().expect("non-empty");
    // row-major per-column buffers: [N, 4H] and [N, H]
    let pt = pv.transpose();
    let mut gates = vec![0.0; n * 4 * h];
    let mut cells = vec![0.0; n * h];
    let mut hs = vec![0.0; n * h];
    let mut hprev = Vec::new();
    let mut z = Vec::new();
    for t in 0..max_len {
        let active: Vec<usize> = (0..lens.len()).filter(|&s| lens[s] > t).collect();
        let batch = active.len();
        z.clear();
        for &s in &active {
            let col = step_col(offsets[s], lens[s], t, reverse);
            z.extend_from_slice(&pt.data()[col * 4 * h..(col + 1) * 4 * h]);
        }
        if t > 0 {
            hprev.clear();
            for &s in &active {
                let prev = step_col(offsets[s], lens[s], t - 1, reverse);
                hprev.extend_from_slice(&hs[prev * h..(prev + 1) * h]);
            }
            gemm_nt(&hprev, uv.data(), &mut z, batch, h, 4 * h);
        }
        for (bi, &s) in active.iter().enumerate() {
            let col = step_col(offsets[s], lens[s], t, reverse);
            let zr = &z[bi * 4 * h..(bi + 1) * 4 * h];
            let prev = (t > 0).then(|| step_col(offsets[s], lens[s], t - 1, reverse));
            for k in 0..h {
                let i = sigmoid(zr[k]);
                let f = sigmoid(zr[h + k]);
                let o = sigmoid(zr[2 * h + k]);
                let g = zr[3 * h + k].tanh();
                let c_prev = prev.map_or(0.0, |pc| cells[pc * h + k]);
                let c = f * c_prev + i * g;
                let gr = &mut gates[col * 4 * h..(col + 1) * 4 * h];
                gr[k] = i;
                gr[h + k] = f;
                gr[2 * h + k] = o;
                gr[3 * h + k] = g;
                cells[col * h + k] = c;
                hs[col * h + k] = o * c.tanh();
            }
        }
    }
    let out = Tensor::new(vec![n, h], hs.clone())?.transpose();
    let op = LstmRecurrence { lens: lens.to_vec(), offsets, reverse, hidden: h, gates, cells, hs };
    Ok(tape.custom(&[p, u], out, Box::new(op)))
}

fn offsets(lens: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    lens.iter()
        .map(|&l| {
            let o = acc;
            acc += l;
            o
        })
        .collect()
}

struct LstmRecurrence {
    lens: Vec<usize>,
    offsets: Vec<usize>,
    reverse: bool,
    hidden: usize,
    gates: Vec<Real>,
    cells: Vec<Real>,
    hs: Vec<Real>,
}

impl CustomOp<Real> for LstmRecurrence {
    fn name(&self) -> &'static str {
        "lstm_recurrence"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let h = self.hidden;
        let u = inputs[1];
        let n = grad.cols();
        let gt = grad.transpose();
        // running gradients w.r.t. h and c, indexed by column
        let mut dh = gt.into_data();
        let mut dc = vec![0.0; n * h];
        let mut dz = vec![0.0; n * 4 * h];
        let mut du = vec![0.0; 4 * h * h];
        let max_len = *self.lens.iter().max().expect("non-empty");
        let mut dz_batch = Vec::new();
        let mut hprev = Vec::new();
        let mut dhprev = Vec::new();
        for t in (0..max_len).rev() {
            let active: Vec<usize> = (0..self.lens.len()).filter(|&s| self.lens[s] > t).collect();
            let batch = active.len();
            dz_batch.clear();
            for &s in &active {
                let col = step_col(self.offsets[s], self.lens[s], t, self.reverse);
                let prev = (t > 0).then(|| step_col(self.offsets[s], self.lens[s], t - 1, self.reverse));
                let gr = &self.gates[col * 4 * h..(col + 1) * 4 * h];
                for k in 0..h {
                    let (i, f, o, g) = (gr[k], gr[h + k], gr[2 * h + k], gr[3 * h + k]);
                    let c = self.cells[col * h + k];
                    let tc = c.tanh();
                    let dhk = dh[col * h + k];
                    let dck = dc[col * h + k] + dhk * o * (1.0 - tc * tc);
                    let c_prev = prev.map_or(0.0, |pc| self.cells[pc * h + k]);
                    let dzr = &mut dz[col * 4 * h..(col + 1) * 4 * h];
                    dzr[k] = dck * g * i * (1.0 - i);
                    dzr[h + k] = dck * c_prev * f * (1.0 - f);
                    dzr[2 * h + k] = dhk * tc * o * (1.0 - o);
                    dzr[3 * h + k] = dck * i * (1.0 - g * g);
                    if let Some(pc) = prev {
                        dc[pc * h + k] += dck * f;
                    }
                }
                dz_batch.extend_from_slice(&dz[col * 4 * h..(col + 1) * 4 * h]);
            }
            if t == 0 {
                continue;
            }
            hprev.clear();
            for &s in &active {
                let prev = step_col(self.offsets[s], self.lens[s], t - 1, self.reverse);
                hprev.extend_from_slice(&self.hs[prev * h..(prev + 1) * h]);
            }
            // dU += dZᵀ · h_prev ; dh_prev += dZ · U
            gemm_tn(&dz_batch, &hprev, &mut du, 4 * h, batch, h);
            dhprev.clear();
            dhprev.resize(batch * h, 0.0);
            gemm_nn(&dz_batch, u.data(), &mut dhprev, batch, 4 * h, h);
            for (bi, &s) in active.iter().enumerate() {
                let prev = step_col(self.offsets[s], self.lens[s], t - 1, self.reverse);
                for k in 0..h {
                    dh[prev * h + k] += dhprev[bi * h + k];
                }
            }
        }
        let dp = Tensor::new(vec![n, 4 * h], dz).expect("sized").transpose();
        let du = Tensor::new(vec![4 * h, h], du).expect("sized");
        vec![Some(dp), Some(du)]
    }
}

/// Description attention. Scores `wᵀ[x; q; x∘q]` for every sentence column
/// `x` and description column `q`, softmax over the description.
/// Returns `(A: [T, J], G: [d, T])` with `G[:, t] = Σⱼ A[t, j] Q[:, j]`.
pub fn attend(tape: &mut Tape<'_>, x: Var, q: Var, w: Var) -> Result<(Var, Var)> {
    let d = tape.value(x).rows();
    let (t_len, j_len) = (tape.value(x).cols(), tape.value(q).cols());
    if tape.value(q).rows() != d || tape.value(w).len() != 3 * d {
        return Err(Error::Shape(format!(
            "attend: X {:?}, Q {:?}, w {:?}",
            tape.value(x).shape(),
            tape.value(q).shape(),
            tape.value(w).shape()
        )));
    }
    let w = tape.reshape(w, &[3 * d, 1])?;
    let w_x = tape.slice_rows(w, 0, d)?;
    let w_q = tape.slice_rows(w, d, d)?;
    let w_xq = tape.slice_rows(w, 2 * d, d)?;
    let s_x = tape.matmul_tn(x, w_x)?;
    let s_x = tape.reshape(s_x, &[t_len])?;
    let s_q = tape.matmul_tn(w_q, q)?;
    let s_q = tape.reshape(s_q, &[j_len])?;
    let w_xq = tape.reshape(w_xq, &[d])?;
    let xw = tape.mul_col_broadcast(x, w_xq)?;
    let scores = tape.matmul_tn(xw, q)?;
    let scores = tape.add_col_broadcast(scores, s_x)?;
    let scores = tape.add_row_broadcast(scores, s_q)?;
    let a = tape.softmax_rows(scores);
    let g = tape.matmul_nt(q, a)?;
    Ok((a, g))
}

/// One tanh hidden layer followed by a linear map to label scores.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let w1 = params.add(format!("{prefix}.w1"), xavier_uniform(&[hidden, input], rng)?);
        let b1 = params.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]));
        let w2 = params.add(format!("{prefix}.w2"), xavier_uniform(&[output, hidden], rng)?);
        let b2 = params.add(format!("{prefix}.b2"), Tensor::zeros(&[output]));
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, bind: &Binding, x: Var) -> Result<Var> {
        let h = tape.matmul(bind.var(self.w1), x)?;
        let h = tape.add_col_broadcast(h, bind.var(self.b1))?;
        let h = tape.tanh(h);
        let o = tape.matmul(bind.var(self.w2), h)?;
        tape.add_col_broadcast(o, bind.var(self.b2))
    }
}

/// Single affine map followed by tanh.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(params: &mut ParamSet, prefix: &str, input: usize, output: usize, rng: &mut SeededRng) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), xavier_uniform(&[output, input], rng)?);
        let b = params.add(format!("{prefix}.b"), Tensor::zeros(&[output]));
        Ok(Self { w, b })
    }

    pub fn affine(&self, tape: &mut Tape<'_>, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(bind.var(self.w), x)?;
        tape.add_col_broadcast(y, bind.var(self.b))
    }
}

/// Inverted dropout: keeps each entry with probability `keep` and rescales by `1/keep`.
pub fn dropout(tape: &mut Tape<'_>, x: Var, keep: Real, rng: &mut SeededRng) -> Result<Var> {
    use rand::Rng;
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidArgument(format!("dropout keep probability {keep} not in (0, 1]")));
    }
    if keep == 1.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n).map(|_| if rng.gen::<Real>() < keep { 1.0 / keep } else { 0.0 }).collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

/// Layer sizes for the ZAT stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZatDims {
    pub lstm_hidden: usize,
    pub ff_hidden: usize,
}

impl Default for ZatDims {
    fn default() -> Self {
        Self { lstm_hidden: 200, ff_hidden: 100 }
    }
}

/// `H = G + X`, the conditional BiLSTM over packed `H`, then per-column label scores.
pub fn condition_encode(
    tape: &mut Tape<'_>,
    bind: &Binding,
    g: Var,
    x: Var,
    lens: &[usize],
    cond: &BiLstm,
    ff: &FeedForward,
) -> Result<Var> {
    if tape.value(g).shape() != tape.value(x).shape() {
        return Err(Error::Shape(format!(
            "condition: G {:?} vs X {:?}",
            tape.value(g).shape(),
            tape.value(x).shape()
        )));
    }
    let h = tape.add(g, x)?;
    let c = cond.encode(tape, bind, h, lens)?;
    ff.apply(tape, bind, c)
}
