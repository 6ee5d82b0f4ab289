//! A small in-process low-rank adapter trainer.
//!
//! The "base model" is a frozen random linear classifier over hashed
//! bag-of-words features of the rendered prompt; training fits a rank-`r`
//! update `B·A` scaled by `alpha / r`, with dropout on the adapter input,
//! AdamW, global-norm clipping, gradient accumulation and the cosine
//! schedule. It exists so the full pipeline can be exercised without an
//! accelerator; it is not a language model.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::{StepCallback, TrainJob, TrainOutcome, TrainerBackend};
use super::{StepRecord, TrainConfig, TrainError};
use crate::instruction::{render_prompt, InstructionInstance};
use crate::par::{self, Execution};

pub const FEATURE_DIM: usize = 512;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// L2-normalized hashed unigram and bigram counts, as sorted sparse pairs.
pub fn featurize(text: &str, dim: usize) -> Vec<(usize, f64)> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    let mut counts = std::collections::BTreeMap::<usize, f64>::new();
    for w in &words {
        *counts.entry((fnv1a(w.as_bytes()) % dim as u64) as usize).or_default() += 1.0;
    }
    for pair in words.windows(2) {
        let joined = format!("{} {}", pair[0], pair[1]);
        *counts.entry((fnv1a(joined.as_bytes()) % dim as u64) as usize).or_default() += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Vec::new();
    }
    counts.into_iter().map(|(i, v)| (i, v / norm)).collect()
}

fn frozen_base(seed: u64, classes: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
    (0..classes * dim).map(|_| rng.random_range(-0.01..0.01)).collect()
}

/// Frozen base weights plus the trained adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyModel {
    pub labels: Vec<String>,
    pub dim: usize,
    pub rank: usize,
    pub scaling: f64,
    pub base_seed: u64,
    /// `rank x dim`, row-major.
    pub a: Vec<f64>,
    /// `labels x rank`, row-major.
    pub b: Vec<f64>,
    #[serde(skip)]
    w0: Vec<f64>,
}

impl TinyModel {
    pub fn new(labels: Vec<String>, cfg: &TrainConfig) -> Self {
        let dim = FEATURE_DIM;
        let rank = cfg.lora_r;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = (1.0 / dim as f64).sqrt();
        let a = (0..rank * dim).map(|_| rng.random_range(-bound..bound)).collect();
        let b = vec![0.0; labels.len() * rank];
        let w0 = frozen_base(cfg.seed, labels.len(), dim);
        TinyModel { dim, rank, scaling: cfg.lora_scaling(), base_seed: cfg.seed, a, b, w0, labels }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut m: TinyModel = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if m.a.len() != m.rank * m.dim || m.b.len() != m.labels.len() * m.rank {
            return Err(format!("{}: adapter shapes do not match its header", path.display()));
        }
        m.w0 = frozen_base(m.base_seed, m.labels.len(), m.dim);
        Ok(m)
    }

    pub fn trainable_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    fn adapter_in(&self, x: &[(usize, f64)]) -> Vec<f64> {
        (0..self.rank).map(|j| x.iter().map(|&(d, v)| self.a[j * self.dim + d] * v).sum()).collect()
    }

    fn logits(&self, x: &[(usize, f64)], x_adapter: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let h = self.adapter_in(x_adapter);
        let logits = (0..self.labels.len())
            .map(|c| {
                let base: f64 = x.iter().map(|&(d, v)| self.w0[c * self.dim + d] * v).sum();
                let lora: f64 = (0..self.rank).map(|j| self.b[c * self.rank + j] * h[j]).sum();
                base + self.scaling * lora
            })
            .collect();
        (logits, h)
    }

    /// Logits for the labels the instance's instruction lists, or for every
    /// known label when the list is empty.
    pub fn scores(&self, instance: &InstructionInstance) -> Vec<(String, f64)> {
        let x = featurize(&render_prompt(instance), self.dim);
        let (logits, _) = self.logits(&x, &x);
        let allowed = instance.label_space();
        self.labels
            .iter()
            .zip(logits)
            .filter(|(l, _)| allowed.is_empty() || allowed.contains(l))
            .map(|(l, z)| (l.clone(), z))
            .collect()
    }

    /// Highest-scoring label; ties go to the earlier label.
    pub fn predict(&self, instance: &InstructionInstance) -> Option<String> {
        let mut best: Option<(String, f64)> = None;
        for (l, z) in self.scores(instance) {
            if best.as_ref().is_none_or(|(_, bz)| z > *bz) {
                best = Some((l, z));
            }
        }
        best.map(|(l, _)| l)
    }
}

struct Grad {
    loss: f64,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
}

fn example_grad(model: &TinyModel, x: &[(usize, f64)], target: usize, dropout: f64, seed: u64) -> Grad {
    let x_drop: Vec<(usize, f64)> = if dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        x.iter().filter(|_| rng.random::<f64>() >= dropout).map(|&(d, v)| (d, v / (1.0 - dropout))).collect()
    } else {
        x.to_vec()
    };
    let (logits, h) = model.logits(x, &x_drop);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[target] / sum).ln();
    let dlogits: Vec<f64> =
        exps.iter().enumerate().map(|(c, e)| e / sum - if c == target { 1.0 } else { 0.0 }).collect();
    let (r, s) = (model.rank, model.scaling);
    let mut b = vec![0.0; model.b.len()];
    let mut dh = vec![0.0; r];
    for (c, g) in dlogits.iter().enumerate() {
        for j in 0..r {
            b[c * r + j] = s * g * h[j];
            dh[j] += s * g * model.b[c * r + j];
        }
    }
    let a = (0..r)
        .flat_map(|j| {
            let g = dh[j];
            x_drop.iter().map(move |&(d, v)| (j, d, g * v))
        })
        .collect();
    Grad { loss, a, b }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        let (b1, b2, eps) = (cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
            params[i] -= lr * (update + cfg.weight_decay * params[i]);
        }
    }
}

/// Collects every label named by any instance, in first-seen order.
fn label_inventory(instances: &[InstructionInstance]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for inst in instances {
        for l in inst.label_space().into_iter().chain(std::iter::once(inst.output.clone())) {
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
    }
    labels
}

/// Trains a [`TinyModel`] and writes it to `adapter.json`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TinyLoraBackend {
    pub execution: Execution,
}

impl TrainerBackend for TinyLoraBackend {
    fn name(&self) -> &str {
        "tiny-lora"
    }

    fn train(&self, job: &TrainJob<'_>, callbacks: &dyn StepCallback) -> Result<TrainOutcome, TrainError> {
        let cfg = job.config;
        let labels = label_inventory(job.instances);
        let mut model = TinyModel::new(labels, cfg);
        let data: Vec<(Vec<(usize, f64)>, usize)> = par::map(self.execution, job.instances, |inst| {
            let target = model.labels.iter().position(|l| *l == inst.output).expect("inventory covers outputs");
            (featurize(&render_prompt(inst), model.dim), target)
        });

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut opt_a = AdamW::new(model.a.len());
        let mut opt_b = AdamW::new(model.b.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0usize;
        let mut last_loss = f64::NAN;
        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let lr = job.schedule[step];
                step += 1;
                let mut grad_a = vec![0.0; model.a.len()];
                let mut grad_b = vec![0.0; model.b.len()];
                let mut loss = 0.0;
                for micro in batch.chunks(cfg.micro_batch_size) {
                    let grads = par::map(self.execution, micro, |&i| {
                        let seed = cfg.seed ^ ((step as u64) << 32) ^ i as u64;
                        example_grad(&model, &data[i].0, data[i].1, cfg.lora_dropout, seed)
                    });
                    for g in grads {
                        loss += g.loss;
                        for (j, d, v) in g.a {
                            grad_a[j * model.dim + d] += v;
                        }
                        for (acc, v) in grad_b.iter_mut().zip(g.b) {
                            *acc += v;
                        }
                    }
                }
                let n = batch.len() as f64;
                loss /= n;
                let mut norm = 0.0;
                for g in grad_a.iter_mut().chain(grad_b.iter_mut()) {
                    *g /= n;
                    norm += *g * *g;
                }
                let norm = norm.sqrt();
                if norm > cfg.grad_clip_norm {
                    let k = cfg.grad_clip_norm / norm;
                    grad_a.iter_mut().chain(grad_b.iter_mut()).for_each(|g| *g *= k);
                }
                opt_a.step(&mut model.a, &grad_a, lr, cfg);
                opt_b.step(&mut model.b, &grad_b, lr, cfg);
                last_loss = loss;
                callbacks.on_step(StepRecord { step, lr, loss });
            }
        }

        let path: PathBuf = job.output_dir.join("adapter.json");
        crate::jsonl::write_json(&model, &path)?;
        Ok(TrainOutcome { checkpoint_path: path, adapter_params_count: model.trainable_params(), final_loss: last_loss })
    }
}
