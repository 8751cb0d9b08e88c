//! Tensor-train factorized transition tensors.
//!
//! The transition tensor `W[α, i1, …, iP]` maps `P` copies of the augmented
//! state `s = [1, h(t-1), …, h(t-L)]` (length `n = H·L + 1`) onto `H` outputs.
//! It is stored as a chain of `P + 1` rank-3 cores:
//!
//! ```text
//! core 0 : (1,   H, r1)      output index α
//! core p : (r_p, n, r_p+1)   state mode p, p = 1..=P
//! ```
//!
//! with boundary ranks `r0 = r(P+1) = 1`. Contracting against `s` multiplies
//! the per-core matrices `M_p = Σ_i core_p[:, i, :] s_i` from the right, so
//! the dense tensor is never formed and intermediates never exceed the rank.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorError};

/// Refuse to materialize dense tensors with more entries than this.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

const TT_MAGIC: &[u8; 4] = b"TTW1";

/// Rank chain `[1, r1, …, rP, 1]` with every interior rank equal to `rank`.
pub fn uniform_ranks(order: usize, rank: usize) -> Vec<usize> {
    let mut ranks = vec![1];
    ranks.extend(std::iter::repeat_n(rank, order));
    ranks.push(1);
    ranks
}

/// Length of the augmented state for hidden size `hidden` and `lag` past states.
pub fn state_len(hidden: usize, lag: usize) -> usize {
    hidden * lag + 1
}

fn validate_ranks(order: usize, ranks: &[usize]) -> Result<()> {
    if order == 0 {
        return Err(Error::RankChain("order must be at least 1".into()));
    }
    if ranks.len() != order + 2 {
        return Err(Error::RankChain(format!(
            "expected {} ranks for order {order}, got {}",
            order + 2,
            ranks.len()
        )));
    }
    if ranks[0] != 1 || ranks[order + 1] != 1 {
        return Err(Error::RankChain(format!("boundary ranks must be 1: {ranks:?}")));
    }
    if ranks.contains(&0) {
        return Err(Error::RankChain(format!("zero rank in {ranks:?}")));
    }
    Ok(())
}

/// `[1, h(t-1), …, h(t-L)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState(Vec<f64>);

impl AugmentedState {
    /// Most recent hidden state first.
    pub fn from_history(history: &[&[f64]]) -> Self {
        let mut s = vec![1.0];
        for h in history {
            s.extend_from_slice(h);
        }
        AugmentedState(s)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Tensor-train cores of one transition tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TTWeight {
    hidden: usize,
    lag: usize,
    order: usize,
    ranks: Vec<usize>,
    cores: Vec<Tensor>,
}

impl TTWeight {
    pub fn zeros(hidden: usize, lag: usize, order: usize, ranks: &[usize]) -> Result<Self> {
        validate_ranks(order, ranks)?;
        let n = state_len(hidden, lag);
        let mut cores = vec![Tensor::zeros(&[1, hidden, ranks[1]])];
        for p in 1..=order {
            cores.push(Tensor::zeros(&[ranks[p], n, ranks[p + 1]]));
        }
        Ok(TTWeight {
            hidden,
            lag,
            order,
            ranks: ranks.to_vec(),
            cores,
        })
    }

    /// Wraps existing cores after checking the shape chain.
    pub fn from_cores(hidden: usize, lag: usize, cores: Vec<Tensor>) -> Result<Self> {
        if cores.len() < 2 {
            return Err(Error::RankChain("need an output core and at least one state core".into()));
        }
        let order = cores.len() - 1;
        let n = state_len(hidden, lag);
        let mut ranks = vec![1];
        for (p, core) in cores.iter().enumerate() {
            let s = core.shape();
            let mode = if p == 0 { hidden } else { n };
            if s.len() != 3 || s[0] != ranks[p] || s[1] != mode {
                return Err(Error::RankChain(format!(
                    "core {p} has shape {s:?}; expected ({}, {mode}, _)",
                    ranks[p]
                )));
            }
            ranks.push(s[2]);
        }
        validate_ranks(order, &ranks)?;
        Ok(TTWeight {
            hidden,
            lag,
            order,
            ranks,
            cores,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn state_len(&self) -> usize {
        state_len(self.hidden, self.lag)
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Tensor] {
        &mut self.cores
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Tensor::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Header `TTW1`, then `H, L, P, #ranks, ranks…` as u32 LE, then every
    /// core row-major as f64 LE in chain order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(TT_MAGIC)?;
        for v in [self.hidden, self.lag, self.order, self.ranks.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for &r in &self.ranks {
            w.write_all(&(r as u32).to_le_bytes())?;
        }
        for core in &self.cores {
            for x in core.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TT_MAGIC {
            return Err(Error::Checkpoint("bad tensor-train magic".into()));
        }
        let hidden = read_u32(r)? as usize;
        let lag = read_u32(r)? as usize;
        let order = read_u32(r)? as usize;
        let nranks = read_u32(r)? as usize;
        if nranks != order + 2 {
            return Err(Error::Checkpoint(format!("{nranks} ranks for order {order}")));
        }
        let ranks = (0..nranks)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut tt = TTWeight::zeros(hidden, lag, order, &ranks)?;
        for core in &mut tt.cores {
            for x in core.data_mut() {
                *x = read_f64(r)?;
            }
        }
        Ok(tt)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Exact number of entries across all cores of a TT transition.
pub fn param_count(hidden: usize, lag: usize, order: usize, ranks: &[usize]) -> Result<usize> {
    validate_ranks(order, ranks)?;
    let n = state_len(hidden, lag);
    let mut total = ranks[0] * hidden * ranks[1];
    for p in 1..=order {
        total += ranks[p] * n * ranks[p + 1];
    }
    Ok(total)
}

/// Entries of the unfactorized transition tensor, `H · (HL+1)^P`.
pub fn dense_param_count(hidden: usize, lag: usize, order: usize) -> usize {
    hidden * state_len(hidden, lag).pow(order as u32)
}

/// Gaussian cores, deterministic per seed.
///
/// State cores use std `(n·R)^(-1/2)` with `R` the largest rank, which keeps
/// each contracted `M_p` at unit scale for states with unit-scale entries;
/// the output core uses `r1^(-1/2)`.
pub fn init_tt(hidden: usize, lag: usize, order: usize, ranks: &[usize], seed: u64) -> Result<TTWeight> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_tt_with(hidden, lag, order, ranks, &mut rng)
}

pub fn init_tt_with<R: rand::Rng + ?Sized>(
    hidden: usize,
    lag: usize,
    order: usize,
    ranks: &[usize],
    rng: &mut R,
) -> Result<TTWeight> {
    validate_ranks(order, ranks)?;
    let n = state_len(hidden, lag);
    let max_rank = *ranks.iter().max().unwrap_or(&1) as f64;
    let mut cores = vec![Tensor::randn(
        &[1, hidden, ranks[1]],
        (ranks[1] as f64).powf(-0.5),
        rng,
    )];
    let std = (n as f64 * max_rank).powf(-0.5);
    for p in 1..=order {
        cores.push(Tensor::randn(&[ranks[p], n, ranks[p + 1]], std, rng));
    }
    TTWeight::from_cores(hidden, lag, cores)
}

/// Per-row intermediates of one contraction, reused by the backward pass.
#[derive(Debug, Clone)]
struct Sweep {
    /// `M_p` for p = 1..=P, each `r_p × r_(p+1)` row-major.
    mats: Vec<Vec<f64>>,
    /// `right[p] = M_p · right[p+1]`, index 0 unused; `right[P+1] = [1]`.
    right: Vec<Vec<f64>>,
}

fn sweep(cores: &[&Tensor], ranks: &[usize], n: usize, s: &[f64]) -> Sweep {
    let order = cores.len() - 1;
    let mut mats = Vec::with_capacity(order);
    for p in 1..=order {
        let (ra, rc) = (ranks[p], ranks[p + 1]);
        let data = cores[p].data();
        let mut m = vec![0.0; ra * rc];
        for a in 0..ra {
            let row = &mut m[a * rc..(a + 1) * rc];
            for (i, &si) in s.iter().enumerate() {
                if si == 0.0 {
                    continue;
                }
                let fiber = &data[(a * n + i) * rc..(a * n + i + 1) * rc];
                for (acc, &w) in row.iter_mut().zip(fiber) {
                    *acc += w * si;
                }
            }
        }
        mats.push(m);
    }
    let mut right = vec![Vec::new(); order + 2];
    right[order + 1] = vec![1.0];
    for p in (1..=order).rev() {
        let (ra, rc) = (ranks[p], ranks[p + 1]);
        let m = &mats[p - 1];
        let next = &right[p + 1];
        right[p] = (0..ra)
            .map(|a| m[a * rc..(a + 1) * rc].iter().zip(next).map(|(x, y)| x * y).sum())
            .collect();
    }
    Sweep { mats, right }
}

fn fold_output(core0: &Tensor, hidden: usize, r1: usize, right1: &[f64], out: &mut [f64]) {
    let d = core0.data();
    for (alpha, o) in out.iter_mut().enumerate().take(hidden) {
        *o = d[alpha * r1..(alpha + 1) * r1]
            .iter()
            .zip(right1)
            .map(|(x, y)| x * y)
            .sum();
    }
}

fn check_state(w: &TTWeight, len: usize) -> Result<()> {
    if len != w.state_len() {
        return Err(TensorError::Dimension {
            op: "tt_contract",
            lhs: vec![w.state_len()],
            rhs: vec![len],
        }
        .into());
    }
    Ok(())
}

/// `v[α] = Σ W[α, i1..iP] Π_p s[i_p]` through the core chain.
pub fn tt_contract(w: &TTWeight, s: &[f64]) -> Result<Vec<f64>> {
    check_state(w, s.len())?;
    let cores: Vec<&Tensor> = w.cores.iter().collect();
    let sw = sweep(&cores, &w.ranks, w.state_len(), s);
    let mut out = vec![0.0; w.hidden];
    fold_output(&w.cores[0], w.hidden, w.ranks[1], &sw.right[1], &mut out);
    Ok(out)
}

/// Reconstructs the dense tensor of shape `(H, n, …, n)`.
pub fn to_dense(w: &TTWeight, cap: usize) -> Result<Tensor> {
    let n = w.state_len();
    let entries = w
        .hidden
        .checked_mul(n.checked_pow(w.order as u32).unwrap_or(usize::MAX))
        .unwrap_or(usize::MAX);
    if entries > cap {
        return Err(Error::CapExceeded { entries, cap });
    }
    // acc holds rows indexed by (α, i1..ip) and columns by the open rank.
    let mut acc = w.cores[0].data().to_vec();
    let mut rows = w.hidden;
    for p in 1..=w.order {
        let (ra, rc) = (w.ranks[p], w.ranks[p + 1]);
        let core = w.cores[p].data();
        let mut next = vec![0.0; rows * n * rc];
        for row in 0..rows {
            let left = &acc[row * ra..(row + 1) * ra];
            for i in 0..n {
                let dst = &mut next[(row * n + i) * rc..(row * n + i + 1) * rc];
                for (a, &l) in left.iter().enumerate() {
                    if l == 0.0 {
                        continue;
                    }
                    let fiber = &core[(a * n + i) * rc..(a * n + i + 1) * rc];
                    for (d, &c) in dst.iter_mut().zip(fiber) {
                        *d += l * c;
                    }
                }
            }
        }
        acc = next;
        rows *= n;
    }
    let mut shape = vec![w.hidden];
    shape.extend(std::iter::repeat_n(n, w.order));
    Ok(Tensor::new(shape, acc)?)
}

/// The `P`-fold outer product `s ⊗ … ⊗ s`, flattened row-major.
pub fn polynomial_features(s: &[f64], order: usize) -> Vec<f64> {
    let mut feats = vec![1.0];
    for _ in 0..order {
        let mut next = Vec::with_capacity(feats.len() * s.len());
        for &f in &feats {
            next.extend(s.iter().map(|&x| f * x));
        }
        feats = next;
    }
    feats
}

/// Contracts a dense `(H, n, …, n)` tensor against `P` copies of `s`.
pub fn dense_contract(dense: &Tensor, s: &[f64]) -> Result<Vec<f64>> {
    let shape = dense.shape();
    if shape.len() < 2 || shape[1..].iter().any(|&e| e != s.len()) {
        return Err(TensorError::Dimension {
            op: "dense_contract",
            lhs: shape.to_vec(),
            rhs: vec![s.len()],
        }
        .into());
    }
    let hidden = shape[0];
    let feats = polynomial_features(s, shape.len() - 1);
    let k = feats.len();
    Ok((0..hidden)
        .map(|a| {
            dense.data()[a * k..(a + 1) * k]
                .iter()
                .zip(&feats)
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect())
}

/// Batched TT contraction node.
struct TtContractOp {
    hidden: usize,
    n: usize,
    ranks: Vec<usize>,
    sweeps: Vec<Sweep>,
}

impl CustomOp for TtContractOp {
    fn name(&self) -> &'static str {
        "tt_contract"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let order = inputs.len() - 2;
        let (cores, s) = (&inputs[..=order], inputs[order + 1]);
        let n = self.n;
        let ranks = &self.ranks;
        let mut gcores: Vec<Tensor> = cores.iter().map(|c| Tensor::zeros(c.shape())).collect();
        let mut gs = Tensor::zeros(s.shape());
        let h = self.hidden;
        let r1 = ranks[1];

        for (b, sw) in self.sweeps.iter().enumerate() {
            let g = &grad.data()[b * h..(b + 1) * h];
            let srow = &s.data()[b * n..(b + 1) * n];

            // Output core: d core0[α, a] = g[α] · right1[a]; left1 = gᵀ core0.
            let c0 = cores[0].data();
            let mut left = vec![0.0; r1];
            {
                let gc0 = gcores[0].data_mut();
                for (alpha, &ga) in g.iter().enumerate() {
                    if ga == 0.0 {
                        continue;
                    }
                    for a in 0..r1 {
                        gc0[alpha * r1 + a] += ga * sw.right[1][a];
                        left[a] += ga * c0[alpha * r1 + a];
                    }
                }
            }

            let gsrow = &mut gs.data_mut()[b * n..(b + 1) * n];
            for p in 1..=order {
                let (ra, rc) = (ranks[p], ranks[p + 1]);
                let right = &sw.right[p + 1];
                let core = cores[p].data();
                let gcore = gcores[p].data_mut();
                for (a, &la) in left.iter().enumerate() {
                    if la == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        let base = (a * n + i) * rc;
                        let si = srow[i];
                        let mut dsi = 0.0;
                        for c in 0..rc {
                            let lr = la * right[c];
                            gcore[base + c] += lr * si;
                            dsi += lr * core[base + c];
                        }
                        gsrow[i] += dsi;
                    }
                }
                let m = &sw.mats[p - 1];
                left = (0..rc)
                    .map(|c| (0..ra).map(|a| left[a] * m[a * rc + c]).sum())
                    .collect();
            }
        }
        gcores.push(gs);
        gcores
    }
}

/// Records the TT contraction of `cores` against `s` on the tape.
///
/// `s` is `(batch, n)` or `(n)`; the result is `(batch, H)` or `(H)`.
pub fn tt_contract_var(tape: &mut Tape, cores: &[Var], s: Var) -> Result<Var> {
    if cores.len() < 2 {
        return Err(Error::RankChain("need at least two cores".into()));
    }
    let core_vals: Vec<&Tensor> = cores.iter().map(|&c| tape.value(c)).collect();
    let hidden = core_vals[0].shape()[1];
    let mut ranks = vec![1];
    for (p, c) in core_vals.iter().enumerate() {
        let sh = c.shape();
        if sh.len() != 3 || sh[0] != ranks[p] {
            return Err(Error::RankChain(format!("core {p} shape {sh:?} breaks the chain")));
        }
        ranks.push(sh[2]);
    }
    let n = core_vals[1].shape()[1];
    if *ranks.last().unwrap() != 1 || core_vals[1..].iter().any(|c| c.shape()[1] != n) {
        return Err(Error::RankChain(format!("invalid chain {ranks:?}")));
    }
    let sv = tape.value(s);
    let sshape = sv.shape().to_vec();
    if sshape.is_empty() || sshape.len() > 2 || *sshape.last().unwrap() != n {
        return Err(TensorError::Dimension {
            op: "tt_contract",
            lhs: vec![n],
            rhs: sshape,
        }
        .into());
    }
    let rows = sv.len() / n;
    let mut out = vec![0.0; rows * hidden];
    let mut sweeps = Vec::with_capacity(rows);
    for b in 0..rows {
        let sw = sweep(&core_vals, &ranks, n, &sv.data()[b * n..(b + 1) * n]);
        fold_output(core_vals[0], hidden, ranks[1], &sw.right[1], &mut out[b * hidden..(b + 1) * hidden]);
        sweeps.push(sw);
    }
    let out_shape = if sshape.len() == 2 { vec![rows, hidden] } else { vec![hidden] };
    let value = Tensor::new(out_shape, out)?;
    let mut inputs = cores.to_vec();
    inputs.push(s);
    Ok(tape.custom(
        &inputs,
        value,
        Box::new(TtContractOp {
            hidden,
            n,
            ranks,
            sweeps,
        }),
    )?)
}

/// Dense higher-order contraction node (unfactorized transition).
struct DenseContractOp {
    order: usize,
}

impl CustomOp for DenseContractOp {
    fn name(&self) -> &'static str {
        "dense_contract"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (w, s) = (inputs[0], inputs[1]);
        let hidden = w.shape()[0];
        let n = *s.shape().last().unwrap();
        let rows = s.len() / n;
        let k = n.pow(self.order as u32);
        let mut gw = Tensor::zeros(w.shape());
        let mut gs = Tensor::zeros(s.shape());
        for b in 0..rows {
            let srow = &s.data()[b * n..(b + 1) * n];
            let g = &grad.data()[b * hidden..(b + 1) * hidden];
            let feats = polynomial_features(srow, self.order);
            // gfeat[idx] = Σ_α g[α] W[α, idx]
            let mut gfeat = vec![0.0; k];
            for (alpha, &ga) in g.iter().enumerate() {
                let wrow = &w.data()[alpha * k..(alpha + 1) * k];
                let gwrow = &mut gw.data_mut()[alpha * k..(alpha + 1) * k];
                for idx in 0..k {
                    gwrow[idx] += ga * feats[idx];
                    gfeat[idx] += ga * wrow[idx];
                }
            }
            let gsrow = &mut gs.data_mut()[b * n..(b + 1) * n];
            for idx in 0..k {
                if gfeat[idx] == 0.0 {
                    continue;
                }
                // Product rule over the P modes of this multi-index.
                let mut digits = vec![0usize; self.order];
                let mut rem = idx;
                for d in digits.iter_mut().rev() {
                    *d = rem % n;
                    rem /= n;
                }
                for p in 0..self.order {
                    let others: f64 = digits
                        .iter()
                        .enumerate()
                        .filter(|&(q, _)| q != p)
                        .map(|(_, &i)| srow[i])
                        .product();
                    gsrow[digits[p]] += gfeat[idx] * others;
                }
            }
        }
        vec![gw, gs]
    }
}

/// Records a dense `(H, n, …, n)` contraction against `s` of shape `(batch, n)` or `(n)`.
pub fn dense_contract_var(tape: &mut Tape, dense: Var, s: Var) -> Result<Var> {
    let wv = tape.value(dense);
    let sv = tape.value(s);
    let n = *sv.shape().last().unwrap_or(&0);
    let wshape = wv.shape().to_vec();
    if wshape.len() < 2 || wshape[1..].iter().any(|&e| e != n) || sv.rank() > 2 {
        return Err(TensorError::Dimension {
            op: "dense_contract",
            lhs: wshape,
            rhs: sv.shape().to_vec(),
        }
        .into());
    }
    let hidden = wshape[0];
    let rows = sv.len() / n;
    let mut out = Vec::with_capacity(rows * hidden);
    for b in 0..rows {
        out.extend(dense_contract(wv, &sv.data()[b * n..(b + 1) * n])?);
    }
    let out_shape = if sv.rank() == 2 { vec![rows, hidden] } else { vec![hidden] };
    let value = Tensor::new(out_shape, out)?;
    Ok(tape.custom(
        &[dense, s],
        value,
        Box::new(DenseContractOp {
            order: wshape.len() - 1,
        }),
    )?)
}
