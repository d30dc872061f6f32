//! Ego-centric perception maps and the CNN feature extractor.
//!
//! Channel layout is `[channel][row][col]`, rows along +y and columns along +x.

use ndarray::{Array1, Array2, Array4, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{Architecture, ShapeError, CNN_BLOCKS, CNN_KERNEL, MAP_CHANNELS};
use crate::geom::Vec2;
use crate::world::WorldState;

/// Four stacked `size × size` channels: observed importance, boundary, neighbor x, neighbor y.
#[derive(Debug, Clone, PartialEq)]
pub struct FourChannelMap {
    size: usize,
    data: Vec<f32>,
}

impl FourChannelMap {
    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![0.0; MAP_CHANNELS * size * size] }
    }

    pub fn from_data(size: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        ShapeError::check("maps", &[MAP_CHANNELS * size * size], &[data.len()])?;
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.size * self.size;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.size + row) * self.size + col]
    }
}

/// Bilinear resize of a square `h × h` grid to `dst × dst`, half-pixel centers
/// (the `align_corners = false` convention), edges clamped.
pub fn bilinear_downsample(src: &[f32], h: usize, dst: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * h, "source grid is not {h}x{h}");
    assert!(h >= dst && dst > 0, "destination must be no larger than the source");
    let scale = h as f64 / dst as f64;
    let taps: Vec<(usize, usize, f64)> = (0..dst)
        .map(|u| {
            let x = ((u as f64 + 0.5) * scale - 0.5).max(0.0);
            let x0 = (x.floor() as usize).min(h - 1);
            let x1 = (x0 + 1).min(h - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(dst * dst);
    for &(r0, r1, wr) in &taps {
        for &(c0, c1, wc) in &taps {
            let at = |r: usize, c: usize| src[r * h + c] as f64;
            let top = at(r0, c0) * (1.0 - wc) + at(r0, c1) * wc;
            let bottom = at(r1, c0) * (1.0 - wc) + at(r1, c1) * wc;
            out.push((top * (1.0 - wr) + bottom * wr) as f32);
        }
    }
    out
}

/// Rasterizes neighbor offsets into the x and y neighbor channels.
///
/// The channel spans `[-r_c, r_c]²` so each pixel covers `2 r_c / size` meters.
/// Offsets outside the span are dropped. Pixels sum the contributions of every
/// neighbor they contain; contributions are accumulated in a canonical order so
/// the result does not depend on the order of `offsets`.
pub fn neighbor_channels(offsets: &[Vec2], comm_range: f64, size: usize) -> (Vec<f32>, Vec<f32>) {
    let mut sorted: Vec<Vec2> = offsets.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let pixel = 2.0 * comm_range / size as f64;
    let index = |v: f64| -> Option<usize> {
        if !(-comm_range..=comm_range).contains(&v) {
            return None;
        }
        Some((((v + comm_range) / pixel).floor() as usize).min(size - 1))
    };
    let mut cx = vec![0.0f32; size * size];
    let mut cy = vec![0.0f32; size * size];
    for d in sorted {
        let (Some(col), Some(row)) = (index(d.x), index(d.y)) else { continue };
        cx[row * size + col] += (d.x / comm_range) as f32;
        cy[row * size + col] += (d.y / comm_range) as f32;
    }
    (cx, cy)
}

/// Builds robot `index`'s input maps from its own observations and its neighbors' positions.
pub fn build_local_maps(world: &WorldState, index: usize, arch: &Architecture) -> FourChannelMap {
    let params = world.params();
    let side = params.side_length as i64;
    let positions = world.estimated_positions();
    let me = positions[index];
    let w = arch.window_size;
    let origin_x = me.x.round() as i64 - (w / 2) as i64;
    let origin_y = me.y.round() as i64 - (w / 2) as i64;
    let robot = &world.robots()[index];
    let field = world.idf();

    let mut importance = vec![0.0f32; w * w];
    let mut boundary = vec![0.0f32; w * w];
    for r in 0..w {
        let row = origin_y + r as i64;
        for c in 0..w {
            let col = origin_x + c as i64;
            if (0..side).contains(&row) && (0..side).contains(&col) {
                importance[r * w + c] = robot.observed_importance(field, col as usize, row as usize) as f32;
            } else {
                boundary[r * w + c] = 1.0;
            }
        }
    }

    let size = arch.channel_size;
    let mut maps = FourChannelMap::zeros(size);
    maps.channel_mut(0).copy_from_slice(&bilinear_downsample(&importance, w, size));
    maps.channel_mut(1).copy_from_slice(&bilinear_downsample(&boundary, w, size));

    let r_c = params.comm_range;
    let offsets: Vec<Vec2> = positions
        .iter()
        .enumerate()
        .filter(|(j, p)| *j != index && p.dist(me) <= r_c)
        .map(|(_, p)| *p - me)
        .collect();
    let (nx, ny) = neighbor_channels(&offsets, r_c, size);
    maps.channel_mut(2).copy_from_slice(&nx);
    maps.channel_mut(3).copy_from_slice(&ny);
    maps
}

/// Convolution followed by inference-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `[out, in, 3, 3]`
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
    pub bn_gamma: Array1<f32>,
    pub bn_beta: Array1<f32>,
    pub bn_mean: Array1<f32>,
    pub bn_var: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnWeights {
    pub blocks: Vec<ConvBlock>,
    /// `[features, channels · size · size]`
    pub linear_weight: Array2<f32>,
    pub linear_bias: Array1<f32>,
}

impl CnnWeights {
    pub fn zeros(arch: &Architecture) -> Self {
        let c = arch.cnn_channels;
        let blocks = (0..CNN_BLOCKS)
            .map(|b| {
                let input = if b == 0 { MAP_CHANNELS } else { c };
                ConvBlock {
                    weight: Array4::zeros((c, input, CNN_KERNEL, CNN_KERNEL)),
                    bias: Array1::zeros(c),
                    bn_gamma: Array1::ones(c),
                    bn_beta: Array1::zeros(c),
                    bn_mean: Array1::zeros(c),
                    bn_var: Array1::ones(c),
                }
            })
            .collect();
        let flat = c * arch.channel_size * arch.channel_size;
        Self {
            blocks,
            linear_weight: Array2::zeros((arch.cnn_features(), flat)),
            linear_bias: Array1::zeros(arch.cnn_features()),
        }
    }

    /// Uniform fan-in scaled weights and randomized batch-norm statistics.
    pub fn random(arch: &Architecture, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Self::zeros(arch);
        for block in &mut w.blocks {
            let fan_in = block.weight.shape()[1] * CNN_KERNEL * CNN_KERNEL;
            let a = (3.0 / fan_in as f32).sqrt();
            block.weight.mapv_inplace(|_| rng.random_range(-a..a));
            block.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            block.bn_gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            block.bn_beta.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            block.bn_mean.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            block.bn_var.mapv_inplace(|_| rng.random_range(0.5..1.5));
        }
        let a = (3.0 / w.linear_weight.shape()[1] as f32).sqrt();
        w.linear_weight.mapv_inplace(|_| rng.random_range(-a..a));
        w.linear_bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        w
    }

    pub fn validate(&self, arch: &Architecture) -> Result<(), ShapeError> {
        let c = arch.cnn_channels;
        ShapeError::check("cnn.blocks", &[CNN_BLOCKS], &[self.blocks.len()])?;
        for (b, block) in self.blocks.iter().enumerate() {
            let input = if b == 0 { MAP_CHANNELS } else { c };
            ShapeError::check(&format!("cnn.conv{b}.weight"), &[c, input, CNN_KERNEL, CNN_KERNEL], block.weight.shape())?;
            for (name, t) in [
                (format!("cnn.conv{b}.bias"), &block.bias),
                (format!("cnn.bn{b}.weight"), &block.bn_gamma),
                (format!("cnn.bn{b}.bias"), &block.bn_beta),
                (format!("cnn.bn{b}.running_mean"), &block.bn_mean),
                (format!("cnn.bn{b}.running_var"), &block.bn_var),
            ] {
                ShapeError::check(&name, &[c], t.shape())?;
            }
        }
        let flat = c * arch.channel_size * arch.channel_size;
        ShapeError::check("cnn.linear.weight", &[arch.cnn_features(), flat], self.linear_weight.shape())?;
        ShapeError::check("cnn.linear.bias", &[arch.cnn_features()], self.linear_bias.shape())?;
        Ok(())
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// 3×3, stride 1, zero-padded cross-correlation through an im2col product.
/// `input` is `[in_channels, size·size]`; returns `[out_channels, size·size]`.
fn conv3x3(input: ArrayView2<'_, f64>, size: usize, weight: &Array4<f32>, bias: &Array1<f32>) -> Array2<f64> {
    let (out_c, in_c) = (weight.shape()[0], weight.shape()[1]);
    let pixels = size * size;
    let mut cols = Array2::<f64>::zeros((in_c * 9, pixels));
    for ic in 0..in_c {
        let plane = input.row(ic);
        for ky in 0..3 {
            for kx in 0..3 {
                let mut dst = cols.row_mut(ic * 9 + ky * 3 + kx);
                for y in 0..size {
                    let sy = y as i64 + ky as i64 - 1;
                    if !(0..size as i64).contains(&sy) {
                        continue;
                    }
                    for x in 0..size {
                        let sx = x as i64 + kx as i64 - 1;
                        if (0..size as i64).contains(&sx) {
                            dst[y * size + x] = plane[sy as usize * size + sx as usize];
                        }
                    }
                }
            }
        }
    }
    let kernel = weight.mapv(f64::from).into_shape_with_order((out_c, in_c * 9)).expect("contiguous kernel");
    let mut out = kernel.dot(&cols);
    for (mut row, b) in out.rows_mut().into_iter().zip(bias) {
        row += f64::from(*b);
    }
    out
}

/// CNN forward pass in inference mode. Returns the feature vector.
pub fn cnn_forward(maps: &FourChannelMap, weights: &CnnWeights, arch: &Architecture) -> Result<Vec<f64>, ShapeError> {
    weights.validate(arch)?;
    let size = arch.channel_size;
    ShapeError::check("maps", &[MAP_CHANNELS, size, size], &[MAP_CHANNELS, maps.size, maps.size])?;
    let slope = f64::from(arch.leaky_slope);
    let eps = f64::from(arch.bn_eps);
    let mut act = Array2::from_shape_vec((MAP_CHANNELS, size * size), maps.data.iter().map(|v| f64::from(*v)).collect())
        .expect("map data has channel layout");
    for block in &weights.blocks {
        let mut z = conv3x3(act.view(), size, &block.weight, &block.bias);
        for (c, mut row) in z.rows_mut().into_iter().enumerate() {
            let inv_std = 1.0 / (f64::from(block.bn_var[c]) + eps).sqrt();
            let (g, b, m) = (f64::from(block.bn_gamma[c]), f64::from(block.bn_beta[c]), f64::from(block.bn_mean[c]));
            row.mapv_inplace(|x| leaky((x - m) * inv_std * g + b, slope));
        }
        act = z;
    }
    let flat = Array1::from_iter(act.iter().copied());
    let lin = weights.linear_weight.mapv(f64::from).dot(&flat);
    Ok(lin.iter().zip(&weights.linear_bias).map(|(v, b)| leaky(v + f64::from(*b), slope)).collect())
}
