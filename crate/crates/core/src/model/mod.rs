//! Hierarchical transformer over composite flow maps: per-block local
//! attention, conv/pool block aggregation between levels and an MLP head.

mod checkpoint;
mod config;
pub mod layers;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, HTCK_MAGIC, HTCK_VERSION};
pub use config::{LevelGeometry, ModelConfig};
pub use params::{HtNetParams, Init, ParamSpec};

use params::Layout;

use crate::error::{Error, Result};
use crate::flow::{CompositeFlowMap, COMPOSITE_CHANNELS};
use crate::tensor::{Graph, Tensor, Var};

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    /// `[batch, num_classes]`.
    pub logits: Var,
    /// Block tokens after each level's transformer layers, `[batch*blocks, n, d]`.
    pub level_outputs: Vec<Var>,
    /// Attention weights per level and layer.
    pub attention: Vec<Vec<Var>>,
}

/// Materialized intermediate values of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: Tensor,
    pub level_outputs: Vec<Tensor>,
    pub attention: Vec<Vec<Tensor>>,
}

/// Loss, per-parameter gradients (layout order) and logits of one batch.
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub logits: Tensor,
}

#[derive(Clone, Debug)]
pub struct HtNet {
    config: ModelConfig,
    layout: Layout,
}

impl HtNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(HtNet { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn init_params(&self, seed: u64) -> HtNetParams {
        self.layout.init(seed)
    }

    pub fn check_params(&self, params: &HtNetParams) -> Result<()> {
        self.layout.check(params)
    }

    /// Splits each map into bottom blocks of flattened patches:
    /// `[batch*blocks, tokens, P*P*3]`, blocks and tokens in row-major order.
    pub fn extract_patches(&self, maps: &[&CompositeFlowMap]) -> Result<Tensor> {
        let cfg = &self.config;
        let size = cfg.image_size;
        if maps.is_empty() {
            return Err(Error::Contract("forward needs at least one input map".into()));
        }
        if let Some(m) = maps.iter().find(|m| m.height() != size || m.width() != size) {
            return Err(Error::Config(format!(
                "model expects {size}x{size} inputs, got {}x{}",
                m.height(),
                m.width()
            )));
        }
        let geo = cfg.level_geometry(0);
        let p = cfg.patch_size;
        let plen = cfg.patch_len();
        let mut out = Vec::with_capacity(maps.len() * size * size * COMPOSITE_CHANNELS);
        for m in maps {
            let data = m.data();
            for gy in 0..geo.grid {
                for gx in 0..geo.grid {
                    for ty in 0..geo.block_side {
                        for tx in 0..geo.block_side {
                            for py in 0..p {
                                let row = gy * cfg.bottom_block + ty * p + py;
                                let col = gx * cfg.bottom_block + tx * p;
                                let start = (row * size + col) * COMPOSITE_CHANNELS;
                                out.extend_from_slice(&data[start..start + p * COMPOSITE_CHANNELS]);
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![maps.len() * geo.blocks(), geo.tokens_per_block(), plen], out)
    }

    /// Linear patch projection plus the level-0 positional table.
    pub fn patch_embed(&self, g: &mut Graph, params: &[Var], patches: Var) -> Result<Var> {
        let x = g.matmul(patches, params[self.layout.patch_weight])?;
        let x = g.add(x, params[self.layout.patch_bias])?;
        g.add(x, params[self.layout.pos[0]])
    }

    /// Builds the forward pass on `patches` from [`HtNet::extract_patches`].
    /// `params` holds one graph leaf per parameter in layout order.
    pub fn build(&self, g: &mut Graph, params: &[Var], patches: Var) -> Result<ForwardGraph> {
        let cfg = &self.config;
        if params.len() != self.layout.specs.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter handles, got {}",
                self.layout.specs.len(),
                params.len()
            )));
        }
        let blocks0 = cfg.level_geometry(0).blocks();
        let batch = g.shape(patches)[0] / blocks0;
        let mut x = self.patch_embed(g, params, patches)?;
        let mut level_outputs = Vec::with_capacity(cfg.levels());
        let mut attention = Vec::with_capacity(cfg.levels());
        for l in 0..cfg.levels() {
            if l > 0 {
                let prev = cfg.level_geometry(l - 1);
                let geo = cfg.level_geometry(l);
                let map = layers::tokens_to_map(g, x, batch, prev.grid, prev.block_side)?;
                let map = layers::block_aggregate(g, map, &self.layout.aggregates[l - 1].bind(params), cfg.ln_eps)?;
                x = layers::map_to_tokens(g, map, geo.grid, geo.block_side)?;
                x = g.add(x, params[self.layout.pos[l]])?;
            }
            let mut maps = Vec::with_capacity(cfg.layers[l]);
            for slots in &self.layout.layers[l] {
                let out = layers::transformer_layer(g, x, cfg.heads[l], cfg.head_width(l), &slots.bind(params), cfg.ln_eps)?;
                x = out.output;
                maps.push(out.attention);
            }
            level_outputs.push(x);
            attention.push(maps);
        }
        let top = cfg.level_geometry(cfg.levels() - 1);
        let d = *cfg.dims.last().expect("validated config has levels");
        let pooled = g.reshape(x, &[batch, top.blocks() * top.tokens_per_block(), d])?;
        let pooled = g.mean_axis(pooled, 1)?;
        let [w1, b1, w2, b2] = self.layout.head.map(|i| params[i]);
        let h = g.matmul(pooled, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let logits = g.matmul(h, w2)?;
        let logits = g.add(logits, b2)?;
        Ok(ForwardGraph {
            logits,
            level_outputs,
            attention,
        })
    }

    fn register(&self, g: &mut Graph, params: &HtNetParams, trainable: bool) -> Result<Vec<Var>> {
        self.check_params(params)?;
        Ok(params
            .entries()
            .iter()
            .map(|(_, t)| g.variable(t.clone(), trainable))
            .collect())
    }

    /// Logits `[batch, num_classes]` for a batch of maps.
    pub fn forward(&self, params: &HtNetParams, maps: &[&CompositeFlowMap]) -> Result<Tensor> {
        Ok(self.trace(params, maps)?.logits)
    }

    pub fn trace(&self, params: &HtNetParams, maps: &[&CompositeFlowMap]) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, params, false)?;
        let patches = g.leaf(self.extract_patches(maps)?);
        let out = self.build(&mut g, &vars, patches)?;
        Ok(ForwardTrace {
            logits: g.value(out.logits).clone(),
            level_outputs: out.level_outputs.iter().map(|&v| g.value(v).clone()).collect(),
            attention: out
                .attention
                .iter()
                .map(|level| level.iter().map(|&v| g.value(v).clone()).collect())
                .collect(),
        })
    }

    /// Weighted cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(
        &self,
        params: &HtNetParams,
        maps: &[&CompositeFlowMap],
        labels: &[usize],
        class_weights: &[f64],
    ) -> Result<LossAndGrad> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, params, true)?;
        let patches = g.leaf(self.extract_patches(maps)?);
        let out = self.build(&mut g, &vars, patches)?;
        let loss = g.weighted_cross_entropy(out.logits, labels, class_weights)?;
        g.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| g.grad_tensor(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        Ok(LossAndGrad {
            loss: g.value(loss).item()?,
            grads,
            logits: g.value(out.logits).clone(),
        })
    }

    /// Loss only, without a backward pass.
    pub fn loss(&self, params: &HtNetParams, maps: &[&CompositeFlowMap], labels: &[usize], class_weights: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, params, false)?;
        let patches = g.leaf(self.extract_patches(maps)?);
        let out = self.build(&mut g, &vars, patches)?;
        let loss = g.weighted_cross_entropy(out.logits, labels, class_weights)?;
        g.value(loss).item()
    }
}
