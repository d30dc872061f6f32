//! Network architecture manifest shared by the runtime and the weight file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
pub struct ShapeError {
    pub tensor: String,
    pub expected: Vec<usize>,
    pub found: Vec<usize>,
}

impl ShapeError {
    pub fn check(tensor: &str, expected: &[usize], found: &[usize]) -> Result<(), ShapeError> {
        if expected == found {
            Ok(())
        } else {
            Err(ShapeError { tensor: tensor.to_string(), expected: expected.to_vec(), found: found.to_vec() })
        }
    }
}

/// Hyperparameters fixing every tensor shape of the policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Negative slope of the CNN leaky ReLUs.
    pub leaky_slope: f32,
    /// Batch-norm variance epsilon.
    pub bn_eps: f32,
    /// Graph convolution layers (L).
    pub gnn_layers: usize,
    /// Hops per graph convolution (K).
    pub gnn_hops: usize,
    /// GNN input width: CNN features plus the 2-D normalized position.
    pub gnn_input: usize,
    /// Width of every GNN layer output.
    pub gnn_hidden: usize,
    /// Side of each perception channel in pixels.
    pub channel_size: usize,
    /// Side of the local map window in cells before downsampling.
    pub window_size: usize,
    /// Output channels of each conv block.
    pub cnn_channels: usize,
    /// Width of the two hidden MLP layers.
    pub mlp_hidden: usize,
}

pub const CNN_BLOCKS: usize = 3;
pub const CNN_KERNEL: usize = 3;
pub const MAP_CHANNELS: usize = 4;

impl Default for Architecture {
    fn default() -> Self {
        Self {
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            gnn_layers: 5,
            gnn_hops: 3,
            gnn_input: 34,
            gnn_hidden: 256,
            channel_size: 32,
            window_size: 256,
            cnn_channels: 32,
            mlp_hidden: 32,
        }
    }
}

impl Architecture {
    /// Length of the CNN output vector.
    pub fn cnn_features(&self) -> usize {
        self.gnn_input - 2
    }

    /// Input width of GNN layer `l` (1-based).
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 1 {
            self.gnn_input
        } else {
            self.gnn_hidden
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gnn_input <= 2 {
            return Err("gnn_input must exceed 2 (CNN features + position)".into());
        }
        if self.gnn_layers == 0 || self.gnn_hidden == 0 || self.cnn_channels == 0 || self.mlp_hidden == 0 {
            return Err("layer counts and widths must be positive".into());
        }
        if self.channel_size == 0 || self.window_size < self.channel_size {
            return Err("window_size must be at least channel_size".into());
        }
        if !(self.leaky_slope.is_finite() && self.bn_eps.is_finite() && self.bn_eps >= 0.0) {
            return Err("leaky_slope and bn_eps must be finite".into());
        }
        Ok(())
    }
}
