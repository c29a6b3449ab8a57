//! Per-modality encoders producing a global vector and a `P x d` token matrix.
//!
//! - image: gated attention MIL over a bag of patch embeddings,
//!   `x = sum_i a_i * phi(h_i)` with
//!   `a = softmax_i(w . (tanh(V h_i) * sigmoid(U h_i)))`
//! - graph: GraphSAGE layers `h <- act(W1 h + W2 mean_{u in N(v)} h_u)`
//!   followed by the same attention pooling over nodes
//! - text: the precomputed embedding is the global vector
//!
//! Every global vector goes through an affine [`TokenProjector`] reshaped to
//! `P x d`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::cellgraph::CellGraph;
use crate::error::{invalid, Result};

/// Seeded Glorot-uniform initialiser: `U[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub struct Xavier {
    rng: ChaCha8Rng,
}

impl Xavier {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// `out x in` weight matrix.
    pub fn matrix(&mut self, out: usize, inp: usize) -> Tensor {
        let a = (6.0 / (out + inp) as f64).sqrt();
        let data = (0..out * inp).map(|_| self.rng.random_range(-a..=a)).collect();
        Tensor::new(out, inp, data).expect("xavier shape")
    }
}

/// Attention MIL parameters: `V, U: L x d0`, `w: 1 x L`, `phi: d x d0`.
#[derive(Debug, Clone)]
pub struct GatedAttention {
    pub v: ParamId,
    pub u: ParamId,
    pub w: ParamId,
    pub phi: ParamId,
}

impl GatedAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Xavier,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            v: store.add(format!("{prefix}.attn.V"), init.matrix(hidden, in_dim))?,
            u: store.add(format!("{prefix}.attn.U"), init.matrix(hidden, in_dim))?,
            w: store.add(format!("{prefix}.attn.w"), init.matrix(1, hidden))?,
            phi: store.add(format!("{prefix}.attn.phi"), init.matrix(out_dim, in_dim))?,
        })
    }
}

/// Pools an `N x d0` bag into `(pooled: 1 x d, attention: 1 x N)`.
pub fn gated_attention_pool(
    g: &mut Graph,
    store: &ParamStore,
    bag: NodeId,
    params: &GatedAttention,
) -> Result<(NodeId, NodeId)> {
    if g.value(bag).rows() == 0 {
        return Err(invalid("attention pooling needs at least one instance"));
    }
    let v = g.param(store, params.v);
    let u = g.param(store, params.u);
    let w = g.param(store, params.w);
    let phi = g.param(store, params.phi);

    let vh = g.matmul_t(bag, v)?;
    let content = g.tanh(vh);
    let uh = g.matmul_t(bag, u)?;
    let gate = g.sigmoid(uh);
    let gated = g.hadamard(content, gate)?;
    let scores = g.matmul_t(gated, w)?;
    let scores = g.transpose(scores);
    let attention = g.softmax_rows(scores);
    let projected = g.matmul_t(bag, phi)?;
    let pooled = g.matmul(attention, projected)?;
    Ok((pooled, attention))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphSageLayer {
    pub w1: ParamId,
    pub w2: ParamId,
    pub activation: Activation,
}

impl GraphSageLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Xavier,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(Self {
            w1: store.add(format!("{prefix}.W1"), init.matrix(out_dim, in_dim))?,
            w2: store.add(format!("{prefix}.W2"), init.matrix(out_dim, in_dim))?,
            activation,
        })
    }
}

/// Runs the layers over `features` (`n x d_in`); isolated nodes aggregate a zero vector.
pub fn graphsage_forward(
    g: &mut Graph,
    store: &ParamStore,
    adjacency: &Arc<Vec<Vec<usize>>>,
    features: NodeId,
    layers: &[GraphSageLayer],
) -> Result<NodeId> {
    let mut h = features;
    for layer in layers {
        let (w1, w2) = (store.value(layer.w1), store.value(layer.w2));
        if w1.shape() != w2.shape() || w1.cols() != g.value(h).cols() {
            return Err(invalid(format!(
                "GraphSAGE layer expects {} input features, got {}",
                w1.cols(),
                g.value(h).cols()
            )));
        }
        let w1 = g.param(store, layer.w1);
        let w2 = g.param(store, layer.w2);
        let own = g.matmul_t(h, w1)?;
        let agg = g.neighbor_mean(h, Arc::clone(adjacency))?;
        let nbr = g.matmul_t(agg, w2)?;
        let pre = g.add(own, nbr)?;
        h = layer.activation.apply(g, pre);
    }
    Ok(h)
}

/// Affine map `d_m -> P*d` reshaped row-major into `P x d`.
#[derive(Debug, Clone)]
pub struct TokenProjector {
    pub w: ParamId,
    pub b: ParamId,
    pub tokens: usize,
    pub width: usize,
}

impl TokenProjector {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Xavier,
        prefix: &str,
        in_dim: usize,
        tokens: usize,
        width: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{prefix}.proj.W"), init.matrix(tokens * width, in_dim))?,
            b: store.add(format!("{prefix}.proj.b"), Tensor::zeros(1, tokens * width))?,
            tokens,
            width,
        })
    }

    pub fn project(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let flat = g.matmul_t(x, w)?;
        let flat = g.add(flat, b)?;
        g.reshape(flat, self.tokens, self.width)
    }
}

/// Graph-node handles for one encoded modality.
#[derive(Debug, Clone, Copy)]
pub struct Encoding {
    pub global: NodeId,
    pub tokens: NodeId,
    pub attention: Option<NodeId>,
}

/// Materialised values of an [`Encoding`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoding {
    pub global: Vec<f64>,
    pub tokens: Tensor,
    pub attention: Option<Vec<f64>>,
}

impl Encoding {
    pub fn values(&self, g: &Graph) -> ModalityEncoding {
        ModalityEncoding {
            global: g.value(self.global).data().to_vec(),
            tokens: g.value(self.tokens).clone(),
            attention: self.attention.map(|a| g.value(a).data().to_vec()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub attention: GatedAttention,
    pub projector: TokenProjector,
}

impl ImageEncoder {
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, patches: &Tensor) -> Result<Encoding> {
        let bag = g.constant(patches.clone());
        let (pooled, attention) = gated_attention_pool(g, store, bag, &self.attention)?;
        let tokens = self.projector.project(g, store, pooled)?;
        Ok(Encoding { global: pooled, tokens, attention: Some(attention) })
    }
}

/// Cell graph in the form the encoder consumes.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub adjacency: Arc<Vec<Vec<usize>>>,
    pub features: Tensor,
}

impl From<&CellGraph> for GraphInput {
    fn from(g: &CellGraph) -> Self {
        Self {
            adjacency: Arc::new(g.adjacency()),
            features: g.feature_matrix(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub layers: Vec<GraphSageLayer>,
    pub attention: GatedAttention,
    pub projector: TokenProjector,
}

impl GraphEncoder {
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, input: &GraphInput) -> Result<Encoding> {
        let x = g.constant(input.features.clone());
        let h = graphsage_forward(g, store, &input.adjacency, x, &self.layers)?;
        let (pooled, attention) = gated_attention_pool(g, store, h, &self.attention)?;
        let tokens = self.projector.project(g, store, pooled)?;
        Ok(Encoding { global: pooled, tokens, attention: Some(attention) })
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub projector: TokenProjector,
}

impl TextEncoder {
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, embedding: &[f64]) -> Result<Encoding> {
        let expected = store.value(self.projector.w).cols();
        if embedding.len() != expected {
            return Err(invalid(format!(
                "text embedding has {} dims, projector expects {expected}",
                embedding.len()
            )));
        }
        let x = g.constant(Tensor::row_vector(embedding.to_vec()));
        let tokens = self.projector.project(g, store, x)?;
        Ok(Encoding { global: x, tokens, attention: None })
    }
}
