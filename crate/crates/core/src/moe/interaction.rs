use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ExpertRole, Modality};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::encoders::Xavier;
use crate::error::{invalid, Result};

/// Counter-based seed for the random tensors of one sample at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbSeed {
    pub run: u64,
    pub epoch: u64,
    pub sample: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl PerturbSeed {
    /// Seed of the stream replacing modality block `r`.
    pub fn stream(&self, r: usize) -> u64 {
        [self.epoch, self.sample, r as u64]
            .iter()
            .fold(splitmix(self.run), |acc, &x| splitmix(acc ^ x))
    }
}

fn normal_block(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(rows, cols, data).expect("normal block shape")
}

/// Replaces block `r` (0-based) with i.i.d. standard-normal draws seeded by
/// `seed`; every other block is returned unchanged.
pub fn perturb(blocks: &[Tensor], r: usize, seed: u64) -> Result<Vec<Tensor>> {
    if r >= blocks.len() {
        return Err(invalid(format!("perturbed modality {r} out of range for {} blocks", blocks.len())));
    }
    let mut out = blocks.to_vec();
    out[r] = normal_block(blocks[r].rows(), blocks[r].cols(), seed);
    Ok(out)
}

/// Graph version of [`perturb`]: block `r` becomes a constant leaf, the
/// others keep their node ids.
pub fn perturb_nodes(g: &mut Graph, blocks: &[NodeId], r: usize, seed: u64) -> Result<Vec<NodeId>> {
    if r >= blocks.len() {
        return Err(invalid(format!("perturbed modality {r} out of range for {} blocks", blocks.len())));
    }
    let s = g.value(blocks[r]).shape();
    let mut out = blocks.to_vec();
    out[r] = g.constant(normal_block(s.0, s.1, seed));
    Ok(out)
}

/// `alpha = softmax(W2 relu(W1 x + b1) + b2)` over the experts.
#[derive(Debug, Clone)]
pub struct GateNetwork {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GateNetwork {
    pub fn new(store: &mut ParamStore, init: &mut Xavier, input: usize, hidden: usize, experts: usize) -> Result<Self> {
        Ok(Self {
            w1: store.add("gate.W1", init.matrix(hidden, input))?,
            b1: store.add("gate.b1", Tensor::zeros(1, hidden))?,
            w2: store.add("gate.W2", init.matrix(experts, hidden))?,
            b2: store.add("gate.b2", Tensor::zeros(1, experts))?,
        })
    }

    /// Pre-softmax gate output `g(x)`.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let expected = store.value(self.w1).cols();
        if g.value(x).shape() != crate::error::Shape(1, expected) {
            return Err(invalid(format!("gate expects a 1x{expected} input, got {}", g.value(x).shape())));
        }
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let h = g.matmul_t(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let z = g.matmul_t(h, w2)?;
        g.add(z, b2)
    }

    /// `1 x K` expert weights on the open simplex.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let z = self.logits(g, store, x)?;
        Ok(g.softmax_rows(z))
    }
}

/// `y = sum_k alpha_k y_k` for a `1 x K` alpha and `K` logit rows.
pub fn fuse(g: &mut Graph, alpha: NodeId, clean: &[NodeId]) -> Result<NodeId> {
    let k = g.value(alpha).cols();
    if g.value(alpha).rows() != 1 || k != clean.len() {
        return Err(invalid(format!("fuse needs 1x{} gate weights, got {}", clean.len(), g.value(alpha).shape())));
    }
    let stacked = g.concat_rows(clean)?;
    g.matmul(alpha, stacked)
}

/// Plain-value version of [`fuse`].
pub fn fuse_values(alpha: &[f64], clean: &[Vec<f64>]) -> Result<Vec<f64>> {
    if alpha.len() != clean.len() || clean.is_empty() {
        return Err(invalid(format!("fuse got {} weights for {} experts", alpha.len(), clean.len())));
    }
    let c = clean[0].len();
    let mut y = vec![0.0; c];
    for (a, logits) in alpha.iter().zip(clean) {
        if logits.len() != c {
            return Err(invalid("expert logits differ in length"));
        }
        for (o, v) in y.iter_mut().zip(logits) {
            *o += a * v;
        }
    }
    Ok(y)
}

/// Clean and perturbed logits of one expert; `perturbed[r]` replaces block `r`.
#[derive(Debug, Clone)]
pub struct ExpertOutputs {
    pub clean: NodeId,
    pub perturbed: Vec<NodeId>,
}

/// Perturbation-contrastive specialisation loss.
///
/// With `D(k, r) = mse(y_k, y_k^r)` and `s(k, r) = exp(-D(k, r))`:
///
/// - uniqueness(m): `s(m, m) + sum_{r != m} (1 - s(k, r))`
/// - redundancy: `sum_r (1 - s(k, r))`
/// - synergy: `sum_r s(k, r)`
///
/// and the loss is the mean of the per-expert terms. [`ExpertRole::Fusion`]
/// experts contribute nothing.
pub fn interaction_loss(
    g: &mut Graph,
    outputs: &[ExpertOutputs],
    roles: &[ExpertRole],
    modalities: &[Modality],
) -> Result<NodeId> {
    if outputs.len() != roles.len() || outputs.is_empty() {
        return Err(invalid(format!("{} expert outputs for {} roles", outputs.len(), roles.len())));
    }
    let mut terms = Vec::with_capacity(outputs.len());
    for (out, &role) in outputs.iter().zip(roles) {
        if out.perturbed.len() != modalities.len() {
            return Err(invalid(format!(
                "expert {role} has {} perturbed outputs, expected {}",
                out.perturbed.len(),
                modalities.len()
            )));
        }
        let own = match role {
            ExpertRole::Uniqueness(m) => Some(
                modalities
                    .iter()
                    .position(|&x| x == m)
                    .ok_or_else(|| invalid(format!("uniqueness expert for absent modality {}", m.name())))?,
            ),
            _ => None,
        };
        if role == ExpertRole::Fusion {
            continue;
        }
        let mut parts = Vec::with_capacity(modalities.len());
        for (r, &p) in out.perturbed.iter().enumerate() {
            let d = g.mse(out.clean, p)?;
            let neg = g.scale(d, -1.0);
            let sim = g.exp(neg);
            let seek_invariance = match role {
                ExpertRole::Uniqueness(_) => Some(r) != own,
                ExpertRole::Redundancy => true,
                ExpertRole::Synergy => false,
                ExpertRole::Fusion => unreachable!(),
            };
            parts.push(if seek_invariance { g.rsub_scalar(1.0, sim) } else { sim });
        }
        let stacked = g.concat_cols(&parts)?;
        terms.push(g.sum(stacked));
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let stacked = g.concat_cols(&terms)?;
    let total = g.sum(stacked);
    Ok(g.scale(total, 1.0 / outputs.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_int: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_int: 0.1 }
    }
}

impl LossConfig {
    pub fn new(lambda_int: f64) -> Result<Self> {
        if !(lambda_int >= 0.0 && lambda_int.is_finite()) {
            return Err(invalid(format!("lambda_int must be a finite value >= 0, got {lambda_int}")));
        }
        Ok(Self { lambda_int })
    }
}

/// `cross_entropy(y, label) + lambda_int * interaction`.
pub fn total_loss(
    g: &mut Graph,
    logits: NodeId,
    interaction: Option<NodeId>,
    label: usize,
    cfg: LossConfig,
) -> Result<NodeId> {
    let classes = g.value(logits).cols();
    if label >= classes {
        return Err(invalid(format!("label {label} out of range for {classes} classes")));
    }
    let cls = g.cross_entropy(logits, label)?;
    match interaction {
        Some(int) if cfg.lambda_int != 0.0 => {
            let weighted = g.scale(int, cfg.lambda_int);
            g.add(cls, weighted)
        }
        _ => Ok(cls),
    }
}
