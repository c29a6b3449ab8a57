use std::fmt;

use serde::{Deserialize, Serialize};

use super::Modality;
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::encoders::Xavier;
use crate::error::{invalid, Result};

/// What an expert is regularised to specialise in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertRole {
    Uniqueness(Modality),
    Synergy,
    Redundancy,
    /// The only head of a plain (non-MoE) backbone.
    Fusion,
}

impl ExpertRole {
    pub fn tag(self) -> String {
        match self {
            ExpertRole::Uniqueness(m) => format!("uni_{}", m.letter()),
            ExpertRole::Synergy => "syn".into(),
            ExpertRole::Redundancy => "rduc".into(),
            ExpertRole::Fusion => "fusion".into(),
        }
    }

    /// `M` uniqueness experts in modality order, then synergy, then redundancy.
    pub fn bank(modalities: &[Modality]) -> Vec<ExpertRole> {
        modalities
            .iter()
            .map(|&m| ExpertRole::Uniqueness(m))
            .chain([ExpertRole::Synergy, ExpertRole::Redundancy])
            .collect()
    }
}

impl fmt::Display for ExpertRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Token geometry shared by all backbones: `blocks` modality blocks of
/// `tokens x width`, `classes` output logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub blocks: usize,
    pub tokens: usize,
    pub width: usize,
    pub classes: usize,
}

impl TokenLayout {
    fn check(&self, g: &Graph, blocks: &[NodeId]) -> Result<()> {
        if blocks.len() != self.blocks {
            return Err(invalid(format!(
                "expected {} token blocks, got {}",
                self.blocks,
                blocks.len()
            )));
        }
        for &b in blocks {
            let s = g.value(b).shape();
            if (s.0, s.1) != (self.tokens, self.width) {
                return Err(invalid(format!(
                    "token block must be {}x{}, got {s}",
                    self.tokens, self.width
                )));
            }
        }
        Ok(())
    }
}

/// Two-layer perceptron over the flattened concatenation of all token blocks.
#[derive(Debug, Clone)]
pub struct ExpertNet {
    pub w_a: ParamId,
    pub b_a: ParamId,
    pub w_b: ParamId,
    pub b_b: ParamId,
    pub layout: TokenLayout,
}

impl ExpertNet {
    pub fn new(store: &mut ParamStore, init: &mut Xavier, prefix: &str, layout: TokenLayout, hidden: usize) -> Result<Self> {
        let input = layout.blocks * layout.tokens * layout.width;
        Ok(Self {
            w_a: store.add(format!("{prefix}.mlp.Wa"), init.matrix(hidden, input))?,
            b_a: store.add(format!("{prefix}.mlp.ba"), Tensor::zeros(1, hidden))?,
            w_b: store.add(format!("{prefix}.mlp.Wb"), init.matrix(layout.classes, hidden))?,
            b_b: store.add(format!("{prefix}.mlp.bb"), Tensor::zeros(1, layout.classes))?,
            layout,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, blocks: &[NodeId]) -> Result<NodeId> {
        self.layout.check(g, blocks)?;
        let flat: Vec<NodeId> = blocks
            .iter()
            .map(|&b| g.reshape(b, 1, self.layout.tokens * self.layout.width))
            .collect::<Result<_>>()?;
        let x = g.concat_cols(&flat)?;
        let (wa, ba, wb, bb) = (
            g.param(store, self.w_a),
            g.param(store, self.b_a),
            g.param(store, self.w_b),
            g.param(store, self.b_b),
        );
        let h = g.matmul_t(x, wa)?;
        let h = g.add(h, ba)?;
        let h = g.relu(h);
        let out = g.matmul_t(h, wb)?;
        g.add(out, bb)
    }
}

/// Early fusion: all tokens stacked, one softmax self-attention mixing step
/// `T + softmax(T Wqk T^T / sqrt(d)) T`, then a shared per-token perceptron
/// whose logits are averaged over tokens.
#[derive(Debug, Clone)]
pub struct EarlyFusionNet {
    pub w_qk: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub layout: TokenLayout,
}

impl EarlyFusionNet {
    pub fn new(store: &mut ParamStore, init: &mut Xavier, prefix: &str, layout: TokenLayout, hidden: usize) -> Result<Self> {
        let d = layout.width;
        Ok(Self {
            w_qk: store.add(format!("{prefix}.ef.Wqk"), init.matrix(d, d))?,
            w1: store.add(format!("{prefix}.ef.W1"), init.matrix(hidden, d))?,
            b1: store.add(format!("{prefix}.ef.b1"), Tensor::zeros(1, hidden))?,
            w2: store.add(format!("{prefix}.ef.W2"), init.matrix(layout.classes, hidden))?,
            b2: store.add(format!("{prefix}.ef.b2"), Tensor::zeros(1, layout.classes))?,
            layout,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, blocks: &[NodeId]) -> Result<NodeId> {
        self.layout.check(g, blocks)?;
        let t = g.concat_rows(blocks)?;
        let wqk = g.param(store, self.w_qk);
        let q = g.matmul_t(t, wqk)?;
        let scores = g.matmul_t(q, t)?;
        let scores = g.scale(scores, 1.0 / (self.layout.width as f64).sqrt());
        let attn = g.softmax_rows(scores);
        let mixed = g.matmul(attn, t)?;
        let mixed = g.add(t, mixed)?;
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let h = g.matmul_t(mixed, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let h = g.mean_rows(h);
        let out = g.matmul_t(h, w2)?;
        g.add(out, b2)
    }
}

/// Switch gating: one perceptron head per modality block and a softmax gate
/// over blocks computed from each block's mean token.
#[derive(Debug, Clone)]
pub struct SwitchGateNet {
    pub heads: Vec<ExpertNet>,
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub layout: TokenLayout,
}

impl SwitchGateNet {
    pub fn new(store: &mut ParamStore, init: &mut Xavier, prefix: &str, layout: TokenLayout, hidden: usize) -> Result<Self> {
        let single = TokenLayout { blocks: 1, ..layout };
        let heads = (0..layout.blocks)
            .map(|i| ExpertNet::new(store, init, &format!("{prefix}.sg{i}"), single, hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            w_g: store.add(format!("{prefix}.sg.Wg"), init.matrix(layout.blocks, layout.blocks * layout.width))?,
            b_g: store.add(format!("{prefix}.sg.bg"), Tensor::zeros(1, layout.blocks))?,
            layout,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, blocks: &[NodeId]) -> Result<NodeId> {
        self.layout.check(g, blocks)?;
        let mut logits = Vec::with_capacity(blocks.len());
        let mut summaries = Vec::with_capacity(blocks.len());
        for (head, &b) in self.heads.iter().zip(blocks) {
            logits.push(head.forward(g, store, &[b])?);
            summaries.push(g.mean_rows(b));
        }
        let s = g.concat_cols(&summaries)?;
        let (wg, bg) = (g.param(store, self.w_g), g.param(store, self.b_g));
        let z = g.matmul_t(s, wg)?;
        let z = g.add(z, bg)?;
        let weights = g.softmax_rows(z);
        let stacked = g.concat_rows(&logits)?;
        g.matmul(weights, stacked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Mlp,
    EarlyFusion,
    SwitchGate,
}

/// A fusion network mapping token blocks to `1 x C` logits.
#[derive(Debug, Clone)]
pub enum Backbone {
    Mlp(ExpertNet),
    EarlyFusion(EarlyFusionNet),
    SwitchGate(SwitchGateNet),
}

impl Backbone {
    pub fn new(
        kind: BackboneKind,
        store: &mut ParamStore,
        init: &mut Xavier,
        prefix: &str,
        layout: TokenLayout,
        hidden: usize,
    ) -> Result<Self> {
        Ok(match kind {
            BackboneKind::Mlp => Backbone::Mlp(ExpertNet::new(store, init, prefix, layout, hidden)?),
            BackboneKind::EarlyFusion => Backbone::EarlyFusion(EarlyFusionNet::new(store, init, prefix, layout, hidden)?),
            BackboneKind::SwitchGate => Backbone::SwitchGate(SwitchGateNet::new(store, init, prefix, layout, hidden)?),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, blocks: &[NodeId]) -> Result<NodeId> {
        match self {
            Backbone::Mlp(n) => n.forward(g, store, blocks),
            Backbone::EarlyFusion(n) => n.forward(g, store, blocks),
            Backbone::SwitchGate(n) => n.forward(g, store, blocks),
        }
    }
}

/// Evaluates one expert on concrete token blocks.
pub fn expert_forward(expert: &Backbone, store: &ParamStore, blocks: &[Tensor]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = blocks.iter().map(|b| g.constant(b.clone())).collect();
    let out = expert.forward(&mut g, store, &nodes)?;
    Ok(g.value(out).data().to_vec())
}
