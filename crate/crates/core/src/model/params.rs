use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{AggregateWeights, AttentionWeights, FeedForwardWeights, TransformerLayerWeights};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlots {
    ln1_gamma: usize,
    ln1_beta: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_gamma: usize,
    ln2_beta: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl LayerSlots {
    pub(crate) fn bind(&self, v: &[Var]) -> TransformerLayerWeights {
        TransformerLayerWeights {
            ln1_gamma: v[self.ln1_gamma],
            ln1_beta: v[self.ln1_beta],
            attn: AttentionWeights {
                wq: v[self.wq],
                wk: v[self.wk],
                wv: v[self.wv],
                wo: v[self.wo],
            },
            ln2_gamma: v[self.ln2_gamma],
            ln2_beta: v[self.ln2_beta],
            ffn: FeedForwardWeights {
                w1: v[self.w1],
                b1: v[self.b1],
                w2: v[self.w2],
                b2: v[self.b2],
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AggregateSlots {
    conv_weight: usize,
    conv_bias: usize,
    ln_gamma: usize,
    ln_beta: usize,
}

impl AggregateSlots {
    pub(crate) fn bind(&self, v: &[Var]) -> AggregateWeights {
        AggregateWeights {
            conv_weight: v[self.conv_weight],
            conv_bias: v[self.conv_bias],
            ln_gamma: v[self.ln_gamma],
            ln_beta: v[self.ln_beta],
        }
    }
}

/// Parameter order and shapes for one config. The order is the checkpoint
/// order: patch projection, then per level the positional table and its
/// layers followed by the aggregation into the next level, then the head.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
    pub patch_weight: usize,
    pub patch_bias: usize,
    pub pos: Vec<usize>,
    pub layers: Vec<Vec<LayerSlots>>,
    pub aggregates: Vec<AggregateSlots>,
    pub head: [usize; 4],
}

impl Layout {
    pub(crate) fn new(cfg: &ModelConfig) -> Layout {
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init });
            specs.len() - 1
        };
        let d0 = cfg.dims[0];
        let patch_weight = push("patch.weight".into(), vec![cfg.patch_len(), d0], Init::FanIn(cfg.patch_len()));
        let patch_bias = push("patch.bias".into(), vec![d0], Init::Zeros);

        let mut pos = Vec::new();
        let mut layers = Vec::new();
        let mut aggregates = Vec::new();
        for l in 0..cfg.levels() {
            let d = cfg.dims[l];
            let n = cfg.level_geometry(l).tokens_per_block();
            let inner = cfg.heads[l] * cfg.head_width(l);
            let hidden = cfg.ffn_expansion * d;
            pos.push(push(format!("level{l}.pos"), vec![n, d], Init::Zeros));
            let mut level = Vec::new();
            for j in 0..cfg.layers[l] {
                let p = format!("level{l}.layer{j}");
                level.push(LayerSlots {
                    ln1_gamma: push(format!("{p}.ln1.gamma"), vec![d], Init::Ones),
                    ln1_beta: push(format!("{p}.ln1.beta"), vec![d], Init::Zeros),
                    wq: push(format!("{p}.attn.wq"), vec![d, inner], Init::FanIn(d)),
                    wk: push(format!("{p}.attn.wk"), vec![d, inner], Init::FanIn(d)),
                    wv: push(format!("{p}.attn.wv"), vec![d, inner], Init::FanIn(d)),
                    wo: push(format!("{p}.attn.wo"), vec![inner, d], Init::FanIn(inner)),
                    ln2_gamma: push(format!("{p}.ln2.gamma"), vec![d], Init::Ones),
                    ln2_beta: push(format!("{p}.ln2.beta"), vec![d], Init::Zeros),
                    w1: push(format!("{p}.ffn.w1"), vec![d, hidden], Init::FanIn(d)),
                    b1: push(format!("{p}.ffn.b1"), vec![hidden], Init::Zeros),
                    w2: push(format!("{p}.ffn.w2"), vec![hidden, d], Init::FanIn(hidden)),
                    b2: push(format!("{p}.ffn.b2"), vec![d], Init::Zeros),
                });
            }
            layers.push(level);
            if l + 1 < cfg.levels() {
                let next = cfg.dims[l + 1];
                aggregates.push(AggregateSlots {
                    conv_weight: push(format!("agg{l}.conv.weight"), vec![next, d, 3, 3], Init::FanIn(d * 9)),
                    conv_bias: push(format!("agg{l}.conv.bias"), vec![next], Init::Zeros),
                    ln_gamma: push(format!("agg{l}.ln.gamma"), vec![next], Init::Ones),
                    ln_beta: push(format!("agg{l}.ln.beta"), vec![next], Init::Zeros),
                });
            }
        }
        let top = *cfg.dims.last().expect("validated config has levels");
        let head = [
            push("head.w1".into(), vec![top, cfg.head_hidden], Init::FanIn(top)),
            push("head.b1".into(), vec![cfg.head_hidden], Init::Zeros),
            push("head.w2".into(), vec![cfg.head_hidden, cfg.num_classes], Init::FanIn(cfg.head_hidden)),
            push("head.b2".into(), vec![cfg.num_classes], Init::Zeros),
        ];
        Layout {
            specs,
            patch_weight,
            patch_bias,
            pos,
            layers,
            aggregates,
            head,
        }
    }

    pub(crate) fn init(&self, seed: u64) -> HtNetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = self
            .specs
            .iter()
            .map(|s| {
                let t = match s.init {
                    Init::FanIn(fan_in) => Tensor::uniform(&s.shape, 1.0 / (fan_in as f64).sqrt(), &mut rng),
                    Init::Zeros => Tensor::zeros(&s.shape),
                    Init::Ones => Tensor::full(&s.shape, 1.0),
                };
                (s.name.clone(), t)
            })
            .collect();
        HtNetParams { entries }
    }

    pub(crate) fn check(&self, params: &HtNetParams) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(&params.entries) {
            if *name != spec.name || t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct HtNetParams {
    entries: Vec<(String, Tensor)>,
}

impl HtNetParams {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        HtNetParams { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t.squared_norm()).sum::<f64>().sqrt()
    }
}
