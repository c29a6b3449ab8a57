use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experts::{Backbone, BackboneKind, ExpertRole, TokenLayout};
use super::interaction::{
    fuse, interaction_loss, perturb_nodes, total_loss, ExpertOutputs, GateNetwork, LossConfig, PerturbSeed,
};
use super::{Modality, Variant};
use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};
use crate::encoders::{
    Activation, Encoding, GatedAttention, GraphEncoder, GraphInput, GraphSageLayer, ImageEncoder, TextEncoder,
    TokenProjector, Xavier,
};
use crate::error::{invalid, Error, Result};

/// Fusion model family: an expert bank (`pathmoe-*`) or one plain backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelKind {
    pub moe: bool,
    pub backbone: BackboneKind,
}

impl ModelKind {
    pub const PATHMOE_EF: ModelKind = ModelKind { moe: true, backbone: BackboneKind::EarlyFusion };
    pub const PATHMOE_SG: ModelKind = ModelKind { moe: true, backbone: BackboneKind::SwitchGate };
    pub const EF: ModelKind = ModelKind { moe: false, backbone: BackboneKind::EarlyFusion };
    pub const SG: ModelKind = ModelKind { moe: false, backbone: BackboneKind::SwitchGate };
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.backbone {
            BackboneKind::Mlp => "mlp",
            BackboneKind::EarlyFusion => "ef",
            BackboneKind::SwitchGate => "sg",
        };
        if self.moe {
            write!(f, "pathmoe-{b}")
        } else {
            f.write_str(b)
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (moe, rest) = match s.strip_prefix("pathmoe-") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let backbone = match rest {
            "mlp" => BackboneKind::Mlp,
            "ef" => BackboneKind::EarlyFusion,
            "sg" => BackboneKind::SwitchGate,
            _ => return Err(invalid(format!("unknown model {s:?}"))),
        };
        Ok(Self { moe, backbone })
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Raw input widths of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub patch: usize,
    pub text: usize,
    pub node: usize,
}

impl Default for InputDims {
    fn default() -> Self {
        Self { patch: 32, text: 32, node: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Fusion tokens per modality.
    pub tokens: usize,
    /// Token width.
    pub width: usize,
    /// Attention MIL hidden width.
    pub attn_hidden: usize,
    /// Width of the pooled image and graph representations.
    pub global: usize,
    /// Output widths of the GraphSAGE layers.
    pub sage: Vec<usize>,
    pub activation: Activation,
    /// Neighbours per nucleus in the cell graph.
    pub knn: usize,
    pub expert_hidden: usize,
    pub gate_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            tokens: 16,
            width: 32,
            attn_hidden: 64,
            global: 32,
            sage: vec![32, 32],
            activation: Activation::Relu,
            knn: 5,
            expert_hidden: 32,
            gate_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub variant: Variant,
    pub classes: usize,
    pub dims: InputDims,
    pub arch: ArchConfig,
    /// Initialisation seed.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, variant: Variant, classes: usize) -> Self {
        Self { kind, variant, classes, dims: InputDims::default(), arch: ArchConfig::default(), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if self.classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        for (name, v) in [
            ("tokens", a.tokens),
            ("width", a.width),
            ("attn_hidden", a.attn_hidden),
            ("global", a.global),
            ("knn", a.knn),
            ("expert_hidden", a.expert_hidden),
            ("gate_hidden", a.gate_hidden),
            ("patch dim", self.dims.patch),
            ("text dim", self.dims.text),
            ("node dim", self.dims.node),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if a.sage.contains(&0) {
            return Err(invalid("GraphSAGE widths must be positive"));
        }
        Ok(())
    }
}

/// One case; modalities outside the model's variant may be absent.
#[derive(Debug, Clone, Default)]
pub struct ModelInput {
    pub patches: Option<Tensor>,
    pub text: Option<Vec<f64>>,
    pub graph: Option<GraphInput>,
}

#[derive(Debug, Clone)]
pub enum Head {
    Moe { experts: Vec<Backbone>, roles: Vec<ExpertRole>, gate: GateNetwork },
    Single(Backbone),
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub logits: NodeId,
    pub alpha: NodeId,
    pub clean: Vec<NodeId>,
    /// `perturbed[k][r]`: expert `k` with modality block `r` replaced.
    pub perturbed: Vec<Vec<NodeId>>,
    pub attention: Vec<(Modality, NodeId)>,
    pub interaction: Option<NodeId>,
}

/// Materialised outputs for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub logits: Vec<f64>,
    pub alpha: Vec<f64>,
    pub roles: Vec<ExpertRole>,
    pub expert_logits: Vec<Vec<f64>>,
    pub perturbed_logits: Vec<Vec<Vec<f64>>>,
    pub attention: Vec<(Modality, Vec<f64>)>,
    pub predicted: usize,
}

impl PredictionRecord {
    /// Gate weights of the uniqueness experts, in modality order.
    pub fn modality_weights(&self) -> Vec<(Modality, f64)> {
        self.roles
            .iter()
            .zip(&self.alpha)
            .filter_map(|(r, &a)| match r {
                ExpertRole::Uniqueness(m) => Some((*m, a)),
                _ => None,
            })
            .collect()
    }

    pub fn weight_of(&self, role: ExpertRole) -> Option<f64> {
        self.roles.iter().position(|&r| r == role).map(|i| self.alpha[i])
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Encoders plus fusion head; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct PathMoe {
    config: ModelConfig,
    image: Option<ImageEncoder>,
    text: Option<TextEncoder>,
    graph: Option<GraphEncoder>,
    head: Head,
}

impl PathMoe {
    pub fn new(config: ModelConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Xavier::new(config.seed);
        let a = &config.arch;
        let d = &config.dims;
        let v = &config.variant;

        let image = if v.contains(Modality::Image) {
            Some(ImageEncoder {
                attention: GatedAttention::new(&mut store, &mut init, "img", d.patch, a.attn_hidden, a.global)?,
                projector: TokenProjector::new(&mut store, &mut init, "img", a.global, a.tokens, a.width)?,
            })
        } else {
            None
        };
        let text = if v.contains(Modality::Text) {
            Some(TextEncoder {
                projector: TokenProjector::new(&mut store, &mut init, "text", d.text, a.tokens, a.width)?,
            })
        } else {
            None
        };
        let graph = if v.contains(Modality::Graph) {
            let mut layers = Vec::with_capacity(a.sage.len());
            let mut width = d.node;
            for (i, &out) in a.sage.iter().enumerate() {
                layers.push(GraphSageLayer::new(&mut store, &mut init, &format!("graph.sage{i}"), width, out, a.activation)?);
                width = out;
            }
            Some(GraphEncoder {
                layers,
                attention: GatedAttention::new(&mut store, &mut init, "graph", width, a.attn_hidden, a.global)?,
                projector: TokenProjector::new(&mut store, &mut init, "graph", a.global, a.tokens, a.width)?,
            })
        } else {
            None
        };

        let layout = TokenLayout { blocks: v.len(), tokens: a.tokens, width: a.width, classes: config.classes };
        let kind = config.kind;
        let head = if kind.moe {
            let roles = ExpertRole::bank(v.modalities());
            let experts = roles
                .iter()
                .map(|r| Backbone::new(kind.backbone, &mut store, &mut init, &format!("expert.{}", r.tag()), layout, a.expert_hidden))
                .collect::<Result<_>>()?;
            let gate_in: usize = v
                .modalities()
                .iter()
                .map(|m| match m {
                    Modality::Text => d.text,
                    _ => a.global,
                })
                .sum();
            let gate = GateNetwork::new(&mut store, &mut init, gate_in, a.gate_hidden, roles.len())?;
            Head::Moe { experts, roles, gate }
        } else {
            Head::Single(Backbone::new(kind.backbone, &mut store, &mut init, "fusion", layout, a.expert_hidden)?)
        };
        Ok((Self { config, image, text, graph, head }, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn roles(&self) -> Vec<ExpertRole> {
        match &self.head {
            Head::Moe { roles, .. } => roles.clone(),
            Head::Single(_) => vec![ExpertRole::Fusion],
        }
    }

    fn encode(&self, g: &mut Graph, store: &ParamStore, m: Modality, input: &ModelInput) -> Result<Encoding> {
        let dims = &self.config.dims;
        let missing = || Error::MissingModality(format!("variant {} needs {} input", self.config.variant, m.name()));
        match m {
            Modality::Image => {
                let p = input.patches.as_ref().ok_or_else(missing)?;
                if p.cols() != dims.patch || p.rows() == 0 {
                    return Err(invalid(format!("patch bag must be Nx{} with N >= 1, got {}", dims.patch, p.shape())));
                }
                self.image.as_ref().expect("image encoder").encode(g, store, p)
            }
            Modality::Text => {
                let t = input.text.as_ref().ok_or_else(missing)?;
                self.text.as_ref().expect("text encoder").encode(g, store, t)
            }
            Modality::Graph => {
                let gi = input.graph.as_ref().ok_or_else(missing)?;
                if gi.features.cols() != dims.node || gi.features.rows() != gi.adjacency.len() {
                    return Err(invalid(format!(
                        "graph input must have {} node features per node, got {} for {} nodes",
                        dims.node,
                        gi.features.shape(),
                        gi.adjacency.len()
                    )));
                }
                self.graph.as_ref().expect("graph encoder").encode(g, store, gi)
            }
        }
    }

    /// Records the full forward pass. With `seed`, every expert is also run
    /// on each single-modality perturbation and the interaction loss is built.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: &ModelInput, seed: Option<PerturbSeed>) -> Result<Trace> {
        let modalities = self.config.variant.modalities();
        let mut globals = Vec::with_capacity(modalities.len());
        let mut tokens = Vec::with_capacity(modalities.len());
        let mut attention = Vec::new();
        for &m in modalities {
            let enc = self.encode(g, store, m, input)?;
            globals.push(enc.global);
            tokens.push(enc.tokens);
            if let Some(a) = enc.attention {
                attention.push((m, a));
            }
        }

        match &self.head {
            Head::Single(net) => {
                let logits = net.forward(g, store, &tokens)?;
                let alpha = g.constant(Tensor::scalar(1.0));
                Ok(Trace { logits, alpha, clean: vec![logits], perturbed: vec![Vec::new()], attention, interaction: None })
            }
            Head::Moe { experts, roles, gate } => {
                let clean = experts.iter().map(|e| e.forward(g, store, &tokens)).collect::<Result<Vec<_>>>()?;
                let x = g.concat_cols(&globals)?;
                let alpha = gate.forward(g, store, x)?;
                let logits = fuse(g, alpha, &clean)?;
                let mut perturbed = vec![Vec::new(); experts.len()];
                let mut interaction = None;
                if let Some(seed) = seed {
                    for r in 0..modalities.len() {
                        let replaced = perturb_nodes(g, &tokens, r, seed.stream(r))?;
                        for (k, e) in experts.iter().enumerate() {
                            perturbed[k].push(e.forward(g, store, &replaced)?);
                        }
                    }
                    let outputs: Vec<ExpertOutputs> = clean
                        .iter()
                        .zip(&perturbed)
                        .map(|(&c, p)| ExpertOutputs { clean: c, perturbed: p.clone() })
                        .collect();
                    interaction = Some(interaction_loss(g, &outputs, roles, modalities)?);
                }
                Ok(Trace { logits, alpha, clean, perturbed, attention, interaction })
            }
        }
    }

    /// `cross_entropy + lambda_int * interaction` for one case. Perturbed
    /// passes are skipped when they cannot contribute.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &ModelInput,
        label: usize,
        seed: PerturbSeed,
        cfg: LossConfig,
    ) -> Result<(NodeId, Trace)> {
        let use_perturb = cfg.lambda_int > 0.0 && matches!(self.head, Head::Moe { .. });
        let trace = self.forward(g, store, input, use_perturb.then_some(seed))?;
        let loss = total_loss(g, trace.logits, trace.interaction, label, cfg)?;
        Ok((loss, trace))
    }

    /// Mean loss over a batch of `(input, label, seed)` triples.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[(&ModelInput, usize, PerturbSeed)],
        cfg: LossConfig,
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let losses = batch
            .iter()
            .map(|&(x, y, s)| self.loss(g, store, x, y, s, cfg).map(|(l, _)| l))
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.concat_cols(&losses)?;
        let total = g.sum(stacked);
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    pub fn predict(&self, store: &ParamStore, input: &ModelInput, seed: Option<PerturbSeed>) -> Result<PredictionRecord> {
        let mut g = Graph::new();
        let t = self.forward(&mut g, store, input, seed)?;
        let row = |id: NodeId| g.value(id).data().to_vec();
        let logits = row(t.logits);
        let predicted = argmax(&logits);
        Ok(PredictionRecord {
            alpha: row(t.alpha),
            roles: self.roles(),
            expert_logits: t.clean.iter().map(|&c| row(c)).collect(),
            perturbed_logits: t.perturbed.iter().map(|p| p.iter().map(|&x| row(x)).collect()).collect(),
            attention: t.attention.iter().map(|&(m, a)| (m, row(a))).collect(),
            logits,
            predicted,
        })
    }
}
