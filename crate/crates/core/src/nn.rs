//! Network building blocks: dilated convolutions, the residual temporal
//! block, dropout and He initialization.
//!
//! Parameters live in plain structs ([`ConvParams`], [`TemporalBlockParams`]).
//! To run them they are *bound* onto a [`Graph`], which registers every
//! tensor as a leaf (or constant) and returns a mirror struct of [`Var`]s.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Conv1dGeometry, Conv2dGeometry, Float, Graph, Tensor, Var};

/// Samples `N(0, sqrt(2 / fan_in))`.
pub fn he_init<T: Float, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(normal.sample(rng)))
}

/// Depth samples visible to one output of a stack of temporal blocks
/// (two convolutions of height `kh` per block).
pub fn receptive_field(dilations: &[usize], kh: usize) -> usize {
    1 + dilations.iter().map(|d| 2 * (kh - 1) * d).sum::<usize>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvGeometry {
    Planar(Conv2dGeometry),
    Linear(Conv1dGeometry),
}

/// Weights of one stride-1 convolution. The weight is
/// `[out, in, kh, kw]` for planar and `[out, in, k]` for linear geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<T: Float> ConvParams<T> {
    pub fn conv2d<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        geometry: Conv2dGeometry,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        ConvParams {
            weight: he_init(&[out_ch, in_ch, kernel.0, kernel.1], fan_in, rng),
            bias: Tensor::zeros([out_ch]),
            geometry: ConvGeometry::Planar(geometry),
        }
    }

    pub fn conv1d<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geometry: Conv1dGeometry,
        rng: &mut R,
    ) -> Self {
        ConvParams {
            weight: he_init(&[out_ch, in_ch, kernel], in_ch * kernel, rng),
            bias: Tensor::zeros([out_ch]),
            geometry: ConvGeometry::Linear(geometry),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ConvVars {
        let reg = |g: &mut Graph<T>, t: &Tensor<T>| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        ConvVars {
            weight: reg(g, &self.weight),
            bias: reg(g, &self.bias),
            geometry: self.geometry,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// A [`ConvParams`] registered on a graph.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub geometry: ConvGeometry,
}

impl ConvVars {
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self.geometry {
            ConvGeometry::Planar(geom) => g.conv2d(x, self.weight, self.bias, geom),
            ConvGeometry::Linear(geom) => g.conv1d(x, self.weight, self.bias, geom),
        }
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}

/// Inverted dropout: zero each element with probability `p` and rescale the
/// survivors by `1 / (1 - p)`. Identity (and no RNG draws) unless training
/// with `p > 0`.
pub fn dropout<T: Float, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(
            "dropout_p",
            format!("must lie in [0, 1), got {p}"),
        ));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let shape = g.shape(x).to_vec();
    let mask = Tensor::from_fn(shape, |_| {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    });
    let mask = g.constant(mask);
    g.mul(x, mask)
}

/// Residual block of two dilated, size-preserving convolutions:
/// `relu(conv2(dropout(relu(conv1(x)))) + proj(x))`, where `proj` is a
/// 1x1 convolution when the channel count changes and the identity
/// otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBlockParams<T> {
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
    pub downsample: Option<ConvParams<T>>,
    pub dropout_p: f64,
}

impl<T: Float> TemporalBlockParams<T> {
    /// Planar block; dilation grows along depth only.
    #[allow(clippy::too_many_arguments)]
    pub fn new_2d<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        dilation: usize,
        causal: bool,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let geom = Conv2dGeometry::same(kernel, (dilation, 1), causal)?;
        let conv1 = ConvParams::conv2d(in_ch, out_ch, kernel, geom, rng);
        let conv2 = ConvParams::conv2d(out_ch, out_ch, kernel, geom, rng);
        let downsample = (in_ch != out_ch)
            .then(|| ConvParams::conv2d(in_ch, out_ch, (1, 1), Conv2dGeometry::valid(), rng));
        Ok(TemporalBlockParams {
            conv1,
            conv2,
            downsample,
            dropout_p,
        })
    }

    pub fn new_1d<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let geom = Conv1dGeometry::same(kernel, dilation, causal)?;
        let conv1 = ConvParams::conv1d(in_ch, out_ch, kernel, geom, rng);
        let conv2 = ConvParams::conv1d(out_ch, out_ch, kernel, geom, rng);
        let pointwise = Conv1dGeometry::same(1, 1, false)?;
        let downsample =
            (in_ch != out_ch).then(|| ConvParams::conv1d(in_ch, out_ch, 1, pointwise, rng));
        Ok(TemporalBlockParams {
            conv1,
            conv2,
            downsample,
            dropout_p,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> TemporalBlockVars {
        TemporalBlockVars {
            conv1: self.conv1.bind(g, trainable),
            conv2: self.conv2.bind(g, trainable),
            downsample: self.downsample.as_ref().map(|d| d.bind(g, trainable)),
            dropout_p: self.dropout_p,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.conv1.visit(&format!("{prefix}.conv1"), out);
        self.conv2.visit(&format!("{prefix}.conv2"), out);
        if let Some(d) = &self.downsample {
            d.visit(&format!("{prefix}.downsample"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        self.conv1.visit_mut(out);
        self.conv2.visit_mut(out);
        if let Some(d) = &mut self.downsample {
            d.visit_mut(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TemporalBlockVars {
    pub conv1: ConvVars,
    pub conv2: ConvVars,
    pub downsample: Option<ConvVars>,
    pub dropout_p: f64,
}

impl TemporalBlockVars {
    pub fn forward<T: Float, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.relu(h)?;
        let h = dropout(g, h, self.dropout_p, training, rng)?;
        let h = self.conv2.forward(g, h)?;
        let residual = match &self.downsample {
            Some(d) => d.forward(g, x)?,
            None => x,
        };
        let sum = g.add(h, residual)?;
        g.relu(sum)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        self.conv1.vars(out);
        self.conv2.vars(out);
        if let Some(d) = &self.downsample {
            d.vars(out);
        }
    }
}
