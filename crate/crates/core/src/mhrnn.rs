//! Multi-headed Elman language model.
//!
//! One recurrent hidden layer is shared by `M` softmax heads, each of which
//! models one document. The hidden activation is ReSQRT
//! (`sqrt(x + 1) - 1` for `x >= 0`, else `0`), input is one-hot, and
//! training is plain adagrad over truncated BPTT windows.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::EncodedDoc;

pub const MODEL_FILE_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 8] = b"MHRNNMDL";
/// Separates the training RNG stream from the initialization stream.
const TRAIN_STREAM: u64 = 0x7472_6169_6e21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Reverse,
}

impl Direction {
    pub fn is_reversed(self) -> bool {
        self == Direction::Reverse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub hidden_size: usize,
    /// Std of Gaussian noise added to hidden pre-activations while training.
    pub psn: f64,
    /// Per-timestep chance, in the first epoch, of also training a random
    /// non-target head.
    pub leak: f64,
    /// Leak rate multiplier applied once per epoch.
    pub leak_decay: f64,
    /// Epochs to keep training after the best validation entropy.
    pub overfit_epochs: usize,
    pub max_epochs: usize,
    pub direction: Direction,
    pub df_threshold: Option<f64>,
    pub learning_rate: f64,
    pub adagrad_epsilon: f64,
    pub bptt_window: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Trailing share of each document held out for validation.
    pub validation_fraction: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            hidden_size: 99,
            psn: 0.3,
            leak: 0.0,
            leak_decay: 0.5,
            overfit_epochs: 4,
            max_epochs: 100,
            direction: Direction::Forward,
            df_threshold: None,
            learning_rate: 0.1,
            adagrad_epsilon: 1e-8,
            bptt_window: 20,
            init_scale: 0.1,
            seed: 1,
            validation_fraction: 0.05,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_owned()));
        if self.hidden_size == 0 || self.bptt_window == 0 || self.overfit_epochs == 0 || self.max_epochs == 0 {
            return bad("hidden_size, bptt_window, overfit_epochs and max_epochs must be at least 1");
        }
        if !(self.psn >= 0.0 && self.psn.is_finite()) {
            return bad("psn must be a finite non-negative number");
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return bad("leak must lie in [0, 1]");
        }
        if !(self.leak_decay > 0.0 && self.leak_decay <= 1.0) {
            return bad("leak_decay must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.adagrad_epsilon > 0.0) {
            return bad("learning_rate and adagrad_epsilon must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be a finite non-negative number");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        if let Some(t) = self.df_threshold {
            if !(t > 0.0 && t < 1.0) {
                return bad("df_threshold must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

pub fn resqrt(x: f64) -> f64 {
    if x >= 0.0 {
        (x + 1.0).sqrt() - 1.0
    } else {
        0.0
    }
}

/// Derivative of [`resqrt`] expressed through its output `h`.
#[inline]
fn resqrt_grad(pre: f64, h: f64) -> f64 {
    if pre > 0.0 {
        0.5 / (h + 1.0)
    } else {
        0.0
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax_in_place(z: &mut Array1<f64>) {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    z.mapv_inplace(|v| (v - max).exp());
    let sum = z.sum();
    z.mapv_inplace(|v| v / sum);
}

fn log_softmax_at(z: &Array1<f64>, j: usize) -> f64 {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = z.fold(0.0, |acc, &v| acc + (v - max).exp()).ln() + max;
    z[j] - lse
}

/// Output weights of one softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `[alphabet × hidden]`
    pub w_hy: Array2<f64>,
    pub b_y: Array1<f64>,
}

impl Head {
    fn zeros(k: usize, hidden: usize) -> Self {
        Head {
            w_hy: Array2::zeros((k, hidden)),
            b_y: Array1::zeros(k),
        }
    }

    fn logits(&self, h: &Array1<f64>) -> Array1<f64> {
        self.w_hy.dot(h) + &self.b_y
    }
}

/// Every trainable array. Also used for the adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[hidden × alphabet]`
    pub w_xh: Array2<f64>,
    /// `[hidden × hidden]`
    pub w_hh: Array2<f64>,
    pub b_h: Array1<f64>,
    pub heads: Vec<Head>,
}

impl Params {
    fn zeros(k: usize, hidden: usize, n_heads: usize) -> Self {
        Params {
            w_xh: Array2::zeros((hidden, k)),
            w_hh: Array2::zeros((hidden, hidden)),
            b_h: Array1::zeros(hidden),
            heads: (0..n_heads).map(|_| Head::zeros(k, hidden)).collect(),
        }
    }

    fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.w_xh.as_slice().expect("standard layout"),
            self.w_hh.as_slice().expect("standard layout"),
            self.b_h.as_slice().expect("standard layout"),
        ];
        for h in &self.heads {
            out.push(h.w_hy.as_slice().expect("standard layout"));
            out.push(h.b_y.as_slice().expect("standard layout"));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.w_xh.as_slice_mut().expect("standard layout"),
            self.w_hh.as_slice_mut().expect("standard layout"),
            self.b_h.as_slice_mut().expect("standard layout"),
        ];
        for h in &mut self.heads {
            out.push(h.w_hy.as_slice_mut().expect("standard layout"));
            out.push(h.b_y.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn n_values(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

/// Gradients for one BPTT pass. Head gradients are sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_xh: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_h: Array1<f64>,
    pub heads: BTreeMap<usize, Head>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Array1<f64>);

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        HiddenState(Array1::zeros(hidden))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhrnnModel {
    pub params: Params,
    /// Accumulated squared gradients, same shapes as `params`.
    pub accum: Params,
    pub hyper: Hyperparameters,
    pub alphabet_size: usize,
    pub hidden_size: usize,
    pub alphabet_hash: String,
}

/// Per-timestep head assignment during training.
#[derive(Debug, Clone, Copy)]
struct StepHeads {
    target: usize,
    leaked: Option<usize>,
}

impl StepHeads {
    fn iter(self) -> impl Iterator<Item = usize> {
        std::iter::once(self.target).chain(self.leaked)
    }
}

pub fn init_model(alphabet_size: usize, n_heads: usize, hyper: Hyperparameters) -> Result<MhrnnModel> {
    if alphabet_size == 0 || n_heads == 0 {
        return Err(Error::InvalidParameter("alphabet_size and n_heads must be at least 1".into()));
    }
    hyper.validate()?;
    let hidden = hyper.hidden_size;
    let mut params = Params::zeros(alphabet_size, hidden, n_heads);
    let scale = hyper.init_scale;
    if scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut fill = |a: &mut [f64]| a.iter_mut().for_each(|w| *w = rng.random_range(-scale..=scale));
        fill(params.w_xh.as_slice_mut().expect("standard layout"));
        fill(params.w_hh.as_slice_mut().expect("standard layout"));
        for h in &mut params.heads {
            fill(h.w_hy.as_slice_mut().expect("standard layout"));
        }
    }
    Ok(MhrnnModel {
        accum: Params::zeros(alphabet_size, hidden, n_heads),
        params,
        hyper,
        alphabet_size,
        hidden_size: hidden,
        alphabet_hash: String::new(),
    })
}

impl MhrnnModel {
    pub fn n_heads(&self) -> usize {
        self.params.heads.len()
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.n_heads() {
            return Err(Error::InvalidParameter(format!(
                "head {head} out of range for {} heads",
                self.n_heads()
            )));
        }
        Ok(())
    }

    /// Hidden pre-activation `W_hh h + W_xh[:, symbol] + b_h`.
    fn pre_activation(&self, h_prev: &Array1<f64>, symbol: usize) -> Array1<f64> {
        let mut a = self.params.w_hh.dot(h_prev);
        a += &self.params.w_xh.column(symbol);
        a += &self.params.b_h;
        a
    }

    /// One step of the recurrence, without output.
    pub fn advance(&self, state: &HiddenState, symbol: usize) -> HiddenState {
        HiddenState(self.pre_activation(&state.0, symbol).mapv(resqrt))
    }

    /// Feeds `symbol`, then returns the new state and `head`'s distribution
    /// over the next symbol. `noise_std > 0` adds pre-synaptic noise.
    pub fn forward_step<R: Rng + ?Sized>(
        &self,
        state: &HiddenState,
        symbol: usize,
        head: usize,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<(HiddenState, Vec<f64>)> {
        self.check_head(head)?;
        if symbol >= self.alphabet_size {
            return Err(Error::InvalidParameter(format!("symbol {symbol} outside alphabet")));
        }
        let mut a = self.pre_activation(&state.0, symbol);
        if noise_std > 0.0 {
            let normal = Normal::new(0.0, noise_std).expect("finite std");
            a.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        let h = a.mapv(resqrt);
        let mut p = self.params.heads[head].logits(&h);
        softmax_in_place(&mut p);
        Ok((HiddenState(h), p.to_vec()))
    }

    /// Hidden states after each of the first `len - 1` symbols of `symbols`,
    /// starting from zero.
    fn trajectory(&self, symbols: &[usize]) -> Vec<Array1<f64>> {
        let mut h = Array1::zeros(self.hidden_size);
        let mut out = Vec::with_capacity(symbols.len().saturating_sub(1));
        for &s in &symbols[..symbols.len().saturating_sub(1)] {
            h = self.pre_activation(&h, s).mapv(resqrt);
            out.push(h.clone());
        }
        out
    }

    /// Sum of `-ln p(next)` under `head` for predictions `range` of the
    /// trajectory.
    fn head_nats(&self, head: usize, symbols: &[usize], states: &[Array1<f64>], range: std::ops::Range<usize>) -> f64 {
        let h = &self.params.heads[head];
        range
            .map(|t| -log_softmax_at(&h.logits(&states[t]), symbols[t + 1]))
            .sum()
    }

    /// Mean bits per predicted symbol of `doc` under `head`, from a zero
    /// hidden state and without noise.
    pub fn cross_entropy(&self, head: usize, doc: &EncodedDoc) -> Result<f64> {
        self.check_head(head)?;
        check_scorable(doc)?;
        let states = self.trajectory(&doc.symbols);
        let n = states.len();
        Ok(self.head_nats(head, &doc.symbols, &states, 0..n) / n as f64 / std::f64::consts::LN_2)
    }

    /// Cross-entropy of `doc` under every head; the recurrence runs once.
    pub fn cross_entropy_all_heads(&self, doc: &EncodedDoc) -> Result<Vec<f64>> {
        check_scorable(doc)?;
        let states = self.trajectory(&doc.symbols);
        let n = states.len();
        Ok((0..self.n_heads())
            .map(|head| self.head_nats(head, &doc.symbols, &states, 0..n) / n as f64 / std::f64::consts::LN_2)
            .collect())
    }

    /// Total `-ln p` over the whole sequence; the quantity differentiated
    /// by [`MhrnnModel::gradients`].
    pub fn sequence_loss(&self, head: usize, symbols: &[usize]) -> f64 {
        let states = self.trajectory(symbols);
        self.head_nats(head, symbols, &states, 0..states.len())
    }

    /// Exact gradient of [`MhrnnModel::sequence_loss`] by full BPTT.
    pub fn gradients(&self, head: usize, symbols: &[usize]) -> Result<Gradients> {
        self.check_head(head)?;
        if symbols.len() < 2 {
            return Ok(self.zero_gradients());
        }
        let steps = vec![StepHeads { target: head, leaked: None }; symbols.len() - 1];
        let h0 = Array1::zeros(self.hidden_size);
        let pass = self.bptt(symbols, &steps, &h0, None::<(&mut ChaCha8Rng, f64)>);
        Ok(pass.grads)
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            w_xh: Array2::zeros(self.params.w_xh.dim()),
            w_hh: Array2::zeros(self.params.w_hh.dim()),
            b_h: Array1::zeros(self.hidden_size),
            heads: BTreeMap::new(),
        }
    }

    /// Forward and backward over `symbols` (inputs `[..n-1]`, targets
    /// `[1..]`), starting from `h0`.
    fn bptt<R: Rng>(
        &self,
        symbols: &[usize],
        steps: &[StepHeads],
        h0: &Array1<f64>,
        noise: Option<(&mut R, f64)>,
    ) -> BpttPass {
        let t_len = symbols.len() - 1;
        debug_assert_eq!(steps.len(), t_len);
        let k = self.alphabet_size;
        let mut pres = Vec::with_capacity(t_len);
        let mut hs = Vec::with_capacity(t_len + 1);
        hs.push(h0.clone());
        let mut noise = noise.map(|(rng, std)| (rng, Normal::new(0.0, std).expect("finite std")));

        // (head, p - onehot) per step
        let mut dzs: Vec<Vec<(usize, Array1<f64>)>> = Vec::with_capacity(t_len);
        let mut loss = 0.0;
        let mut target_loss = 0.0;
        for t in 0..t_len {
            let mut a = self.pre_activation(&hs[t], symbols[t]);
            if let Some((rng, normal)) = noise.as_mut() {
                a.iter_mut().for_each(|v| *v += normal.sample(&mut **rng));
            }
            let h = a.mapv(resqrt);
            let y = symbols[t + 1];
            let mut step_dz = Vec::with_capacity(2);
            for head in steps[t].iter() {
                let mut p = self.params.heads[head].logits(&h);
                softmax_in_place(&mut p);
                let nll = -p[y].ln();
                loss += nll;
                if head == steps[t].target {
                    target_loss += nll;
                }
                p[y] -= 1.0;
                step_dz.push((head, p));
            }
            dzs.push(step_dz);
            pres.push(a);
            hs.push(h);
        }

        let mut g = self.zero_gradients();
        let mut dh_next: Array1<f64> = Array1::zeros(self.hidden_size);
        for t in (0..t_len).rev() {
            let h = &hs[t + 1];
            let mut dh = dh_next;
            for (head, dz) in &dzs[t] {
                let w = &self.params.heads[*head];
                dh += &w.w_hy.t().dot(dz);
                let hg = g.heads.entry(*head).or_insert_with(|| Head::zeros(k, self.hidden_size));
                add_outer(&mut hg.w_hy, dz.view(), h.view());
                hg.b_y += dz;
            }
            let da: Array1<f64> = Zip::from(&dh)
                .and(&pres[t])
                .and(h)
                .map_collect(|&d, &a, &hv| d * resqrt_grad(a, hv));
            let mut col = g.w_xh.column_mut(symbols[t]);
            col += &da;
            add_outer(&mut g.w_hh, da.view(), hs[t].view());
            g.b_h += &da;
            dh_next = self.params.w_hh.t().dot(&da);
        }
        BpttPass {
            loss,
            target_loss,
            grads: g,
            h_last: hs.pop().expect("at least h0"),
        }
    }

    /// `w -= lr * g / (sqrt(G) + eps)` with `G += g^2`, per weight.
    fn adagrad_update(&mut self, grads: &Gradients) {
        let lr = self.hyper.learning_rate;
        let eps = self.hyper.adagrad_epsilon;
        fn step<D: ndarray::Dimension>(
            w: &mut ndarray::Array<f64, D>,
            acc: &mut ndarray::Array<f64, D>,
            g: &ndarray::Array<f64, D>,
            lr: f64,
            eps: f64,
        ) {
            Zip::from(w).and(acc).and(g).for_each(|w, acc, &g| {
                if g != 0.0 {
                    *acc += g * g;
                    *w -= lr * g / (acc.sqrt() + eps);
                }
            });
        }
        step(&mut self.params.w_xh, &mut self.accum.w_xh, &grads.w_xh, lr, eps);
        step(&mut self.params.w_hh, &mut self.accum.w_hh, &grads.w_hh, lr, eps);
        step(&mut self.params.b_h, &mut self.accum.b_h, &grads.b_h, lr, eps);
        for (&i, hg) in &grads.heads {
            let (w, acc) = (&mut self.params.heads[i], &mut self.accum.heads[i]);
            step(&mut w.w_hy, &mut acc.w_hy, &hg.w_hy, lr, eps);
            step(&mut w.b_y, &mut acc.b_y, &hg.b_y, lr, eps);
        }
    }

    fn all_finite(&self) -> bool {
        self.params.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

struct BpttPass {
    loss: f64,
    target_loss: f64,
    grads: Gradients,
    h_last: Array1<f64>,
}

fn add_outer(m: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

fn check_scorable(doc: &EncodedDoc) -> Result<()> {
    if doc.symbols.len() < 2 {
        return Err(Error::DocTooShort {
            doc_id: doc.doc_id.clone(),
            len: doc.symbols.len(),
        });
    }
    Ok(())
}

pub fn cross_entropy(model: &MhrnnModel, head: usize, doc: &EncodedDoc) -> Result<f64> {
    model.cross_entropy(head, doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub leak_rate: f64,
    /// Mean target-head bits per symbol over the epoch's training windows.
    pub train_bits: f64,
    /// Mean over heads of held-out bits per symbol.
    pub validation_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_bits: f64,
}

/// Number of trailing symbols held out of training for validation.
fn validation_len(len: usize, fraction: f64) -> usize {
    let n = (len as f64 * fraction).floor() as usize;
    // keep at least two training symbols
    n.min(len.saturating_sub(2))
}

/// Mean over heads of the bits per symbol on each head's own held-out tail.
/// The whole document is fed so the tail is scored in context. Heads with
/// no held-out symbols are skipped; `None` if every head is skipped.
pub fn validation_entropy(model: &MhrnnModel, docs: &[EncodedDoc]) -> Option<f64> {
    let fraction = model.hyper.validation_fraction;
    let per_head: Vec<f64> = docs
        .iter()
        .enumerate()
        .filter_map(|(head, doc)| {
            let n_val = validation_len(doc.len(), fraction);
            if n_val == 0 {
                return None;
            }
            let states = model.trajectory(&doc.symbols);
            let n = states.len();
            let nats = model.head_nats(head, &doc.symbols, &states, n - n_val..n);
            Some(nats / n_val as f64 / std::f64::consts::LN_2)
        })
        .collect();
    if per_head.is_empty() {
        None
    } else {
        Some(per_head.iter().sum::<f64>() / per_head.len() as f64)
    }
}

/// Trains in place. `docs[h]` is the document of head `h`.
///
/// Each epoch visits documents in a seeded shuffle, in BPTT windows of
/// `bptt_window` predictions; hidden state carries across windows and
/// resets between documents. Training stops `overfit_epochs` epochs after
/// the best validation entropy (or at `max_epochs`) and keeps the final
/// weights rather than the best ones. Documents with fewer than two
/// training symbols are never visited.
pub fn train(model: &mut MhrnnModel, docs: &[EncodedDoc]) -> Result<TrainingLog> {
    let hyper = model.hyper.clone();
    hyper.validate()?;
    if docs.len() != model.n_heads() {
        return Err(Error::ShapeMismatch(format!(
            "{} documents for {} heads",
            docs.len(),
            model.n_heads()
        )));
    }
    if let Some(bad) = docs.iter().flat_map(|d| &d.symbols).find(|&&s| s >= model.alphabet_size) {
        return Err(Error::InvalidParameter(format!("symbol {bad} outside alphabet")));
    }

    let m = model.n_heads();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(TRAIN_STREAM);

    let train_lens: Vec<usize> = docs
        .iter()
        .map(|d| d.len() - validation_len(d.len(), hyper.validation_fraction))
        .collect();
    let mut order: Vec<usize> = (0..m).filter(|&h| train_lens[h] >= 2).collect();

    let mut log = TrainingLog {
        best_validation_bits: f64::INFINITY,
        ..Default::default()
    };
    let mut leak_rate = hyper.leak;
    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut nats = 0.0;
        let mut predictions = 0usize;
        for &head in &order {
            let seq = &docs[head].symbols[..train_lens[head]];
            let mut h = Array1::zeros(model.hidden_size);
            let mut start = 0;
            while start + 1 < seq.len() {
                let end = (start + hyper.bptt_window).min(seq.len() - 1);
                let steps: Vec<StepHeads> = (start..end)
                    .map(|_| {
                        let leaked = (m > 1 && leak_rate > 0.0 && rng.random::<f64>() < leak_rate).then(|| {
                            let other = rng.random_range(0..m - 1);
                            if other >= head { other + 1 } else { other }
                        });
                        StepHeads { target: head, leaked }
                    })
                    .collect();
                let noise = (hyper.psn > 0.0).then_some((&mut rng, hyper.psn));
                let pass = model.bptt(&seq[start..=end], &steps, &h, noise);
                if !pass.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                nats += pass.target_loss;
                predictions += end - start;
                model.adagrad_update(&pass.grads);
                h = pass.h_last;
                start = end;
            }
        }
        if !model.all_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let train_bits = if predictions > 0 {
            nats / predictions as f64 / std::f64::consts::LN_2
        } else {
            f64::NAN
        };
        // Without held-out text, fall back to the training entropy.
        let validation_bits = validation_entropy(model, docs).unwrap_or(train_bits);
        if !validation_bits.is_finite() && predictions > 0 {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log.epochs.push(EpochRecord {
            epoch,
            leak_rate,
            train_bits,
            validation_bits,
        });
        log::debug!("epoch {epoch}: train {train_bits:.4} validation {validation_bits:.4} bits");
        if validation_bits < log.best_validation_bits {
            log.best_validation_bits = validation_bits;
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= hyper.overfit_epochs {
            break;
        }
        leak_rate *= hyper.leak_decay;
    }
    Ok(log)
}

/// Largest `|analytic - numeric| / (|numeric| + 1e-8)` over every weight,
/// comparing BPTT gradients of the total cross-entropy with central
/// differences of step `delta`.
pub fn gradient_check(model: &MhrnnModel, doc: &EncodedDoc, head: usize, delta: f64) -> Result<f64> {
    let analytic = model.gradients(head, &doc.symbols)?;
    let flat = flatten_gradients(model, &analytic);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut offset = 0;
    let n_blocks = probe.params.blocks().len();
    for b in 0..n_blocks {
        let len = probe.params.blocks()[b].len();
        for i in 0..len {
            let orig = probe.params.blocks()[b][i];
            probe.params.blocks_mut()[b][i] = orig + delta;
            let plus = probe.sequence_loss(head, &doc.symbols);
            probe.params.blocks_mut()[b][i] = orig - delta;
            let minus = probe.sequence_loss(head, &doc.symbols);
            probe.params.blocks_mut()[b][i] = orig;
            let numeric = (plus - minus) / (2.0 * delta);
            let err = (flat[offset + i] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(err);
        }
        offset += len;
    }
    Ok(worst)
}

/// Gradients laid out in the same block order as the model parameters.
fn flatten_gradients(model: &MhrnnModel, g: &Gradients) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.params.n_values());
    out.extend(g.w_xh.iter());
    out.extend(g.w_hh.iter());
    out.extend(g.b_h.iter());
    for i in 0..model.n_heads() {
        match g.heads.get(&i) {
            Some(h) => {
                out.extend(h.w_hy.iter());
                out.extend(h.b_y.iter());
            }
            None => out.extend(std::iter::repeat_n(0.0, model.alphabet_size * (model.hidden_size + 1))),
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    hidden_size: usize,
    hyper: Hyperparameters,
    alphabet_hash: String,
    dtype: String,
}

/// Writes the model container.
///
/// Layout: the 8 magic bytes `MHRNNMDL`, a little-endian `u32` header
/// length, the JSON header, then little-endian `f64` blocks, row-major:
/// `W_xh`, `W_hh`, `b_h`, then `W_hy`, `b_y` for each head in order. The
/// adagrad accumulators follow in the same order.
pub fn write_model<W: Write>(model: &MhrnnModel, mut out: W) -> Result<()> {
    let header = ModelHeader {
        version: MODEL_FILE_VERSION,
        k: model.alphabet_size,
        m: model.n_heads(),
        hidden_size: model.hidden_size,
        hyper: model.hyper.clone(),
        alphabet_hash: model.alphabet_hash.clone(),
        dtype: "f64le".into(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.params.n_values() * 16);
    for block in model.params.blocks().into_iter().chain(model.accum.blocks()) {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<MhrnnModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let corrupt = |msg: &str| Error::CorruptFile(msg.to_owned());
    if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
        return Err(corrupt("missing model file magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize.checked_add(header_len).ok_or_else(|| corrupt("header length overflow"))?;
    if bytes.len() < header_end {
        return Err(corrupt("truncated header"));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let version = value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header has no version"))?;
    if version != MODEL_FILE_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: MODEL_FILE_VERSION,
        });
    }
    let header: ModelHeader = serde_json::from_value(value).map_err(|e| Error::CorruptFile(e.to_string()))?;
    if header.dtype != "f64le" {
        return Err(Error::CorruptFile(format!("unsupported dtype {}", header.dtype)));
    }
    if header.k == 0 || header.m == 0 || header.hidden_size != header.hyper.hidden_size {
        return Err(corrupt("inconsistent dimensions"));
    }
    let mut params = Params::zeros(header.k, header.hidden_size, header.m);
    let mut accum = Params::zeros(header.k, header.hidden_size, header.m);
    let body = &bytes[header_end..];
    let expected = (params.n_values() + accum.n_values()) * 8;
    if body.len() != expected {
        return Err(Error::CorruptFile(format!(
            "weight section is {} bytes, expected {expected}",
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for block in params.blocks_mut().into_iter().chain(accum.blocks_mut()) {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(MhrnnModel {
        params,
        accum,
        alphabet_size: header.k,
        hidden_size: header.hidden_size,
        hyper: header.hyper,
        alphabet_hash: header.alphabet_hash,
    })
}

pub fn save_model(model: &MhrnnModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MhrnnModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
