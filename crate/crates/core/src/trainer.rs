//! Projection-head training on frozen features.
//!
//! The head is `y = normalize(x W + b)` with `normalize(z) = z / (|z| + 1e-12)`.
//! Training minimizes the mean triplet margin loss over mined triplets with
//! AdamW and a reduce-on-plateau schedule driven by validation loss.
//!
//! Random streams, all SplitMix64 (see [`crate::rng`]):
//!
//! * `master = RngStream::new(seed)`; the head initialization draws
//!   `W[i][j] ~ U(-1/sqrt(d_in), 1/sqrt(d_in))` from it in row-major order.
//! * epoch `e` draws its training batches from `master.child()` taken at
//!   the start of the epoch.
//! * validation batches come from `RngStream::new(seed ^ VAL_SEED_XOR)`,
//!   recreated every epoch so each epoch sees the same validation batches.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::evaluator::l2_normalize;
use crate::mining::{self, MiningStrategy, PkConfig, Triplet};
use crate::model::EmbeddingSet;
use crate::rng::RngStream;

pub const NORM_EPS: f64 = 1e-12;
pub const PLATEAU_THRESHOLD: f64 = 1e-8;
pub const VAL_SEED_XOR: u64 = 0x7661_6C69_6461_7465;

/// Trainable `d_in -> d_out` projection. `weight` is row-major `d_in x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    d_in: usize,
    d_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(ReidError::ZeroDim);
        }
        if weight.len() != d_in * d_out {
            return Err(ReidError::DimMismatch {
                expected: d_in * d_out,
                found: weight.len(),
            });
        }
        if bias.len() != d_out {
            return Err(ReidError::DimMismatch {
                expected: d_out,
                found: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ReidError::Other("non-finite head parameter".into()));
        }
        Ok(Self {
            d_in,
            d_out,
            weight,
            bias,
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut weight = vec![0.0; d * d];
        for i in 0..d {
            weight[i * d + i] = 1.0;
        }
        Self {
            d_in: d,
            d_out: d,
            weight,
            bias: vec![0.0; d],
        }
    }

    /// `W ~ U(±1/sqrt(d_in))` drawn row-major from `rng`, `b = 0`.
    pub fn init(d_in: usize, d_out: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = (0..d_in * d_out)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self {
            d_in,
            d_out,
            weight,
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// `x W + b` for one row.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(ReidError::DimMismatch {
                expected: self.d_in,
                found: x.len(),
            });
        }
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.d_out..(i + 1) * self.d_out];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        Ok(z)
    }

    /// Projected and L2-normalized rows.
    pub fn forward<R: AsRef<[f64]>>(&self, x: &[R]) -> Result<Vec<Vec<f64>>> {
        x.iter()
            .map(|row| self.project(row.as_ref()).map(|z| l2_normalize(&z)))
            .collect()
    }

    /// Applies the head to every record of a set; output vectors are f32.
    pub fn embed_set(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        if set.dim() != self.d_in {
            return Err(ReidError::DimMismatch {
                expected: self.d_in,
                found: set.dim(),
            });
        }
        set.map_vectors(self.d_out, |v| {
            let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
            let z = self.project(&x).expect("dimension checked");
            l2_normalize(&z).into_iter().map(|a| a as f32).collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
    /// Triplets with a positive hinge.
    pub active: usize,
    /// Active triplets whose gradient was dropped because a distance was zero.
    pub skipped_zero_distance: usize,
}

/// Mean triplet margin loss on normalized head outputs and its analytic
/// gradient with respect to `W` and `b`.
pub fn loss_backward<R: AsRef<[f64]>>(
    head: &LinearHead,
    x: &[R],
    triplets: &[Triplet],
    margin: f64,
) -> Result<LossOutput> {
    let (d_in, d_out) = (head.d_in, head.d_out);
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|row| head.project(row.as_ref()))
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = z
        .iter()
        .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect();
    let y: Vec<Vec<f64>> = z
        .iter()
        .zip(&norms)
        .map(|(r, &n)| r.iter().map(|a| a / (n + NORM_EPS)).collect())
        .collect();

    let mut grads = Gradients {
        weight: vec![0.0; d_in * d_out],
        bias: vec![0.0; d_out],
    };
    if triplets.is_empty() {
        return Ok(LossOutput {
            loss: 0.0,
            grads,
            active: 0,
            skipped_zero_distance: 0,
        });
    }

    let scale = 1.0 / triplets.len() as f64;
    let mut gy = vec![vec![0.0; d_out]; x.len()];
    let mut total = 0.0;
    let mut active = 0;
    let mut skipped = 0;
    for t in triplets {
        let (a, p, n) = (t.anchor, t.positive, t.negative);
        let dap = mining::euclidean(&y[a], &y[p]);
        let dan = mining::euclidean(&y[a], &y[n]);
        let hinge = dap - dan + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        active += 1;
        if dap == 0.0 || dan == 0.0 {
            skipped += 1;
            continue;
        }
        for j in 0..d_out {
            let up = (y[a][j] - y[p][j]) / dap * scale;
            let un = (y[a][j] - y[n][j]) / dan * scale;
            gy[a][j] += up - un;
            gy[p][j] -= up;
            gy[n][j] += un;
        }
    }

    // y = z / (r + eps), r = |z|:
    // dL/dz = g / (r + eps) - z (z . g) / (r (r + eps)^2)
    for (i, g) in gy.iter().enumerate() {
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let r = norms[i];
        let denom = r + NORM_EPS;
        let zg: f64 = z[i].iter().zip(g).map(|(a, b)| a * b).sum();
        let coef = if r > 0.0 { zg / (r * denom * denom) } else { 0.0 };
        let dz: Vec<f64> = g
            .iter()
            .zip(&z[i])
            .map(|(gj, zj)| gj / denom - zj * coef)
            .collect();
        let xi = x[i].as_ref();
        for (k, &xk) in xi.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let row = &mut grads.weight[k * d_out..(k + 1) * d_out];
            for (w, d) in row.iter_mut().zip(&dz) {
                *w += xk * d;
            }
        }
        for (b, d) in grads.bias.iter_mut().zip(&dz) {
            *b += d;
        }
    }

    Ok(LossOutput {
        loss: total * scale,
        grads,
        active,
        skipped_zero_distance: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub pk: PkConfig,
    pub seed: u64,
    pub embed_dim: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mining: MiningStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            epochs: 300,
            plateau_factor: 0.2,
            plateau_patience: 10,
            pk: PkConfig { p: 4, k: 4 },
            seed: 0,
            embed_dim: 512,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mining: MiningStrategy::Hard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ReidError::InvalidConfig(m));
        self.pk.validate()?;
        if !(self.margin >= 0.0) {
            return bad(format!("margin {} < 0", self.margin));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate and weight_decay must be >= 0".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor {} not in (0, 1)", self.plateau_factor));
        }
        if self.plateau_patience == 0 || self.embed_dim == 0 {
            return bad("plateau_patience and embed_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys and
    /// unparsable values are collected and reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut errors = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`: {raw}", no + 1));
                continue;
            };
            if let Err(msg) = cfg.set(key.trim(), value.trim()) {
                errors.push(format!("line {}: {msg}: {raw}", no + 1));
            }
        }
        if !errors.is_empty() {
            return Err(ReidError::ConfigParse(errors));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ReidError::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?}"))
        }
        match key {
            "margin" => self.margin = num(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "plateau_factor" => self.plateau_factor = num(value)?,
            "plateau_patience" => self.plateau_patience = num(value)?,
            "p" => self.pk.p = num(value)?,
            "k" => self.pk.k = num(value)?,
            "seed" => self.seed = num(value)?,
            "embed_dim" => self.embed_dim = num(value)?,
            "adam_beta1" => self.adam_beta1 = num(value)?,
            "adam_beta2" => self.adam_beta2 = num(value)?,
            "adam_eps" => self.adam_eps = num(value)?,
            "mining" => self.mining = value.parse().map_err(|e: ReidError| e.to_string())?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m_weight: Vec<f64>,
    pub v_weight: Vec<f64>,
    pub m_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub best_val: f64,
    pub epochs_since_improvement: usize,
}

impl OptimizerState {
    pub fn new(head: &LinearHead, lr: f64) -> Self {
        Self {
            m_weight: vec![0.0; head.weight.len()],
            v_weight: vec![0.0; head.weight.len()],
            m_bias: vec![0.0; head.bias.len()],
            v_bias: vec![0.0; head.bias.len()],
            step: 0,
            lr,
            best_val: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// Hyperparameters that [`adamw_step`] reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
        }
    }
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    opt: AdamW,
    lr: f64,
    step: u64,
    decay: bool,
) {
    let bc1 = 1.0 - opt.beta1.powf(step as f64);
    let bc2 = 1.0 - opt.beta2.powf(step as f64);
    let shrink = if decay { 1.0 - lr * opt.weight_decay } else { 1.0 };
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        // theta - lr*wd*theta - lr*m_hat/(sqrt(v_hat)+eps), decay on the old theta
        params[i] = params[i] * shrink - lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
}

/// One decoupled-weight-decay Adam step. The bias is not decayed.
pub fn adamw_step(head: &mut LinearHead, grads: &Gradients, state: &mut OptimizerState, opt: AdamW) {
    assert_eq!(grads.weight.len(), head.weight.len());
    assert_eq!(grads.bias.len(), head.bias.len());
    state.step += 1;
    let lr = state.lr;
    adam_update(
        &mut head.weight,
        &grads.weight,
        &mut state.m_weight,
        &mut state.v_weight,
        opt,
        lr,
        state.step,
        true,
    );
    adam_update(
        &mut head.bias,
        &grads.bias,
        &mut state.m_bias,
        &mut state.v_bias,
        opt,
        lr,
        state.step,
        false,
    );
}

/// Reduce-on-plateau bookkeeping; returns true when the rate was cut.
pub fn plateau_update(state: &mut OptimizerState, val_loss: f64, factor: f64, patience: usize) -> bool {
    if val_loss < state.best_val - PLATEAU_THRESHOLD {
        state.best_val = val_loss;
        state.epochs_since_improvement = 0;
        return false;
    }
    state.epochs_since_improvement += 1;
    if state.epochs_since_improvement >= patience {
        state.lr *= factor;
        state.epochs_since_improvement = 0;
        return true;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub active_triplets: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,active_triplets\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.active_triplets
            ));
        }
        out
    }
}

/// Batch loss and gradient after mining on the current head outputs.
fn batch_step(
    head: &LinearHead,
    features: &[Vec<f64>],
    labels: &[usize],
    batch: &[usize],
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(f64, usize, Option<Gradients>)> {
    let x: Vec<&[f64]> = batch.iter().map(|&i| features[i].as_slice()).collect();
    let y = head.forward(&x)?;
    let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
    let d = mining::pairwise_euclidean(&y);
    let triplets = mining::mine(cfg.mining, &d, &batch_labels, cfg.margin);
    if triplets.is_empty() {
        return Ok((0.0, 0, None));
    }
    if !with_grad {
        let loss = mining::triplet_loss(&y, &triplets, cfg.margin);
        let active = triplets
            .iter()
            .filter(|t| d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + cfg.margin > 0.0)
            .count();
        return Ok((loss, active, None));
    }
    let out = loss_backward(head, &x, &triplets, cfg.margin)?;
    Ok((out.loss, out.active, Some(out.grads)))
}

/// Mean batch loss over the fixed validation batches, no updates.
pub fn validation_loss(head: &LinearHead, val: &EmbeddingSet, cfg: &TrainConfig) -> Result<f64> {
    let features = val.vectors_f64();
    let labels = crate::model::label_indices(&val.fish_ids());
    let mut rng = RngStream::new(cfg.seed ^ VAL_SEED_XOR);
    let batches = mining::pk_epoch(&labels, cfg.pk, &mut rng)?;
    if batches.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for b in &batches {
        total += batch_step(head, &features, &labels, b, cfg, false)?.0;
    }
    Ok(total / batches.len() as f64)
}

/// Trains a head from scratch; deterministic in `cfg`.
pub fn train(train_set: &EmbeddingSet, val_set: &EmbeddingSet, cfg: &TrainConfig) -> Result<(LinearHead, TrainHistory)> {
    cfg.validate()?;
    if val_set.dim() != train_set.dim() {
        return Err(ReidError::DimMismatch {
            expected: train_set.dim(),
            found: val_set.dim(),
        });
    }
    let identities: BTreeSet<&str> = train_set.fish_ids().into_iter().collect();
    if identities.len() < cfg.pk.p {
        return Err(ReidError::InsufficientIdentities {
            needed: cfg.pk.p,
            available: identities.len(),
        });
    }

    let mut master = RngStream::new(cfg.seed);
    let mut head = LinearHead::init(train_set.dim(), cfg.embed_dim, &mut master);
    let mut state = OptimizerState::new(&head, cfg.learning_rate);
    let opt = AdamW::from(cfg);
    let features = train_set.vectors_f64();
    let labels = crate::model::label_indices(&train_set.fish_ids());
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let mut rng = master.child();
        let batches = mining::pk_epoch(&labels, cfg.pk, &mut rng)?;
        let lr = state.lr;
        let mut loss_sum = 0.0;
        let mut active = 0;
        for b in &batches {
            let (loss, n_active, grads) = batch_step(&head, &features, &labels, b, cfg, true)?;
            loss_sum += loss;
            active += n_active;
            if let Some(g) = grads {
                if n_active > 0 {
                    adamw_step(&mut head, &g, &mut state, opt);
                }
            }
        }
        let train_loss = if batches.is_empty() {
            0.0
        } else {
            loss_sum / batches.len() as f64
        };
        let val_loss = validation_loss(&head, val_set, cfg)?;
        plateau_update(&mut state, val_loss, cfg.plateau_factor, cfg.plateau_patience);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            active_triplets: active,
        });
    }
    Ok((head, history))
}

pub const HEAD_MAGIC: &str = "REIDHEAD";

#[derive(Debug, Serialize, Deserialize)]
struct HeadHeader {
    magic: String,
    version: u32,
    d_in: usize,
    d_out: usize,
}

/// `<name>.json` header and `<name>.f32` blob holding `W` (row-major) then `b`.
pub fn save_head(head: &LinearHead, name: &Path) -> Result<()> {
    let (meta, blob) = head_paths(name);
    let header = HeadHeader {
        magic: HEAD_MAGIC.into(),
        version: 1,
        d_in: head.d_in,
        d_out: head.d_out,
    };
    let mut f = fs::File::create(&meta).map_err(|e| ReidError::io(&meta, e))?;
    writeln!(f, "{}", serde_json::to_string(&header).expect("header serializes"))
        .map_err(|e| ReidError::io(&meta, e))?;
    let bytes: Vec<u8> = head
        .weight
        .iter()
        .chain(&head.bias)
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(&blob, bytes).map_err(|e| ReidError::io(&blob, e))
}

pub fn load_head(name: &Path) -> Result<LinearHead> {
    let (meta, blob) = head_paths(name);
    let text = fs::read_to_string(&meta).map_err(|e| ReidError::io(&meta, e))?;
    let header: HeadHeader = serde_json::from_str(text.trim()).map_err(|e| ReidError::Metadata {
        path: meta.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    if header.magic != HEAD_MAGIC {
        return Err(ReidError::MagicMismatch {
            expected: HEAD_MAGIC.into(),
            found: header.magic,
        });
    }
    let bytes = fs::read(&blob).map_err(|e| ReidError::io(&blob, e))?;
    let n = header.d_in * header.d_out + header.d_out;
    if bytes.len() != n * 4 {
        return Err(ReidError::BlobLengthMismatch {
            expected: (n * 4) as u64,
            found: bytes.len() as u64,
        });
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let split = header.d_in * header.d_out;
    LinearHead::new(header.d_in, header.d_out, vals[..split].to_vec(), vals[split..].to_vec())
}

pub fn head_paths(name: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut meta = name.as_os_str().to_owned();
    meta.push(".json");
    let mut blob = name.as_os_str().to_owned();
    blob.push(".f32");
    (meta.into(), blob.into())
}
