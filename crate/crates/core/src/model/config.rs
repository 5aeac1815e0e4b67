use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and widths of the hierarchical transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Side of the square composite input.
    pub image_size: usize,
    /// Side of the square patch flattened into one token.
    pub patch_size: usize,
    /// Pixels per block side at the bottom level.
    pub bottom_block: usize,
    /// Feature width per level, strictly increasing.
    pub dims: Vec<usize>,
    pub heads: Vec<usize>,
    /// Width of each attention head. `None` splits `dims[l]` evenly across
    /// `heads[l]`, which then must divide it.
    pub head_dim: Option<usize>,
    /// Transformer layers (one attention + one feed-forward sublayer) per level.
    pub layers: Vec<usize>,
    pub num_classes: usize,
    pub ffn_expansion: usize,
    pub head_hidden: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 28,
            patch_size: 1,
            bottom_block: 7,
            dims: vec![64, 128, 256],
            heads: vec![3, 3, 3],
            head_dim: Some(64),
            layers: vec![2, 2, 8],
            num_classes: 3,
            ffn_expansion: 4,
            head_hidden: 256,
            ln_eps: 1e-5,
        }
    }
}

/// Token layout of one hierarchy level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelGeometry {
    /// Blocks per side of the block grid.
    pub grid: usize,
    /// Tokens per block side.
    pub block_side: usize,
    /// Tokens per side of the whole level feature map.
    pub map_side: usize,
}

impl LevelGeometry {
    pub fn blocks(&self) -> usize {
        self.grid * self.grid
    }

    pub fn tokens_per_block(&self) -> usize {
        self.block_side * self.block_side
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.image_size == 0 || self.patch_size == 0 || self.bottom_block == 0 {
            return fail("image_size, patch_size and bottom_block must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.bottom_block) {
            return fail(format!(
                "image_size {} is not divisible by bottom_block {}",
                self.image_size, self.bottom_block
            ));
        }
        if !self.bottom_block.is_multiple_of(self.patch_size) {
            return fail(format!(
                "bottom_block {} is not divisible by patch_size {}",
                self.bottom_block, self.patch_size
            ));
        }
        let grid = self.image_size / self.bottom_block;
        if !grid.is_power_of_two() {
            return fail(format!("bottom block grid {grid}x{grid} is not a power of two"));
        }
        let levels = grid.trailing_zeros() as usize + 1;
        if self.dims.len() != levels || self.heads.len() != levels || self.layers.len() != levels {
            return fail(format!(
                "a {grid}x{grid} bottom grid needs {levels} levels; got dims {:?}, heads {:?}, layers {:?}",
                self.dims, self.heads, self.layers
            ));
        }
        if self.dims.contains(&0) || self.dims.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!("dims {:?} must be positive and strictly increasing", self.dims));
        }
        for (l, (&d, &h)) in self.dims.iter().zip(&self.heads).enumerate() {
            if h == 0 {
                return fail(format!("level {l} has zero heads"));
            }
            match self.head_dim {
                Some(0) => return fail("head_dim must be positive".into()),
                Some(_) => {}
                None if d % h != 0 => {
                    return fail(format!("level {l}: dim {d} is not divisible by {h} heads"));
                }
                None => {}
            }
        }
        if self.num_classes < 2 || self.ffn_expansion == 0 || self.head_hidden == 0 {
            return fail("num_classes >= 2, ffn_expansion >= 1 and head_hidden >= 1 are required".into());
        }
        if !(self.ln_eps > 0.0) {
            return fail(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    /// Per-level token geometry; the grid halves at each aggregation while
    /// the block side stays fixed.
    pub fn level_geometry(&self, level: usize) -> LevelGeometry {
        let block_side = self.bottom_block / self.patch_size;
        let grid = (self.image_size / self.bottom_block) >> level;
        LevelGeometry {
            grid,
            block_side,
            map_side: grid * block_side,
        }
    }

    pub fn head_width(&self, level: usize) -> usize {
        self.head_dim.unwrap_or(self.dims[level] / self.heads[level])
    }

    /// Length of one flattened patch vector.
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * crate::flow::COMPOSITE_CHANNELS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_expected_geometry() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        let grids: Vec<usize> = (0..3).map(|l| cfg.level_geometry(l).grid).collect();
        let sides: Vec<usize> = (0..3).map(|l| cfg.level_geometry(l).map_side).collect();
        assert_eq!(grids, [4, 2, 1]);
        assert_eq!(sides, [28, 14, 7]);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ModelConfig { bottom_block: 6, ..Default::default() },
            ModelConfig { patch_size: 2, ..Default::default() },
            ModelConfig { dims: vec![64, 64, 256], ..Default::default() },
            ModelConfig { head_dim: None, ..Default::default() },
            ModelConfig { layers: vec![2, 2], ..Default::default() },
            ModelConfig { image_size: 21, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn even_split_when_heads_divide_dims() {
        let cfg = ModelConfig {
            dims: vec![48, 96, 192],
            head_dim: None,
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.head_width(2), 64);
    }
}
