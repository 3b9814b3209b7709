//! The spatiotemporal 2-D TCN (shared feature extractor feeding a regression
//! head and a seismic reconstruction head) and the two trace-only baselines.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ConvParams, ConvVars, TemporalBlockParams, TemporalBlockVars};
use crate::tensor::{Conv1dGeometry, Conv2dGeometry, Float, Graph, Tensor, Var};

/// Output channels of the feature extractor's last layer.
pub const FEATURE_CHANNELS: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// 2-D temporal blocks over a `d x m` patch, two heads.
    Proposed2d,
    /// 1-D temporal blocks over the center trace, two heads.
    Tcn1d,
    /// Single-layer unidirectional LSTM over the center trace.
    Lstm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed2d => "proposed2d",
            Variant::Tcn1d => "tcn1d",
            Variant::Lstm => "lstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed2d" => Ok(Variant::Proposed2d),
            "tcn1d" => Ok(Variant::Tcn1d),
            "lstm" => Ok(Variant::Lstm),
            other => Err(Error::config(
                "variant",
                format!("unknown variant `{other}` (expected proposed2d, tcn1d or lstm)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Patch width `m` in traces; odd so a center trace exists.
    pub patch_width: usize,
    /// Depth samples `d`; `None` means "take it from the data".
    pub depth: Option<usize>,
    pub block_channels: Vec<usize>,
    pub dilations: Vec<usize>,
    /// Temporal-block kernel `(kh, kw)`; `kw` is ignored by the 1-D variants.
    pub kernel: (usize, usize),
    pub causal: bool,
    pub dropout_p: f64,
    /// Hidden widths of both 3-layer heads.
    pub head_channels: [usize; 2],
    pub lstm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Proposed2d,
            patch_width: 7,
            depth: None,
            block_channels: vec![8, 16, 32, 64, 120],
            dilations: vec![1, 2, 4, 8, 16],
            kernel: (5, 3),
            causal: false,
            dropout_p: 0.2,
            head_channels: [60, 30],
            lstm_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_width == 0 || self.patch_width.is_multiple_of(2) {
            return Err(Error::config(
                "patch_width",
                format!("must be odd, got {}", self.patch_width),
            ));
        }
        if self.depth == Some(0) {
            return Err(Error::config("depth", "must be positive"));
        }
        if self.variant == Variant::Lstm {
            if self.lstm_hidden == 0 {
                return Err(Error::config("lstm_hidden", "must be positive"));
            }
            return Ok(());
        }
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::config(
                "block_channels",
                "must be a non-empty list of positive channel counts",
            ));
        }
        if self.block_channels.len() != self.dilations.len() {
            return Err(Error::config(
                "dilations",
                format!(
                    "has {} entries but block_channels has {}",
                    self.dilations.len(),
                    self.block_channels.len()
                ),
            ));
        }
        if self.dilations.contains(&0) {
            return Err(Error::config("dilations", "every dilation must be >= 1"));
        }
        if self.variant == Variant::Proposed2d
            && self.block_channels.last() != Some(&FEATURE_CHANNELS)
        {
            return Err(Error::config(
                "block_channels",
                format!("the 2-D feature extractor must end at {FEATURE_CHANNELS} channels"),
            ));
        }
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 {
            return Err(Error::config("kernel", "sizes must be positive"));
        }
        if kw % 2 == 0 {
            return Err(Error::config("kernel", "width must be odd"));
        }
        if !self.causal && kh % 2 == 0 {
            return Err(Error::config("kernel", "height must be odd unless causal"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p", "must lie in [0, 1)"));
        }
        if self.head_channels.contains(&0) {
            return Err(Error::config("head_channels", "must be positive"));
        }
        Ok(())
    }

    /// Width of the patch the regression target is centered in.
    pub fn center_column(&self) -> usize {
        self.patch_width / 2
    }
}

/// Temporal-block feature extractor with regression and reconstruction heads.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnParams<T> {
    pub blocks: Vec<TemporalBlockParams<T>>,
    pub regression: [ConvParams<T>; 3],
    pub reconstruction: [ConvParams<T>; 3],
}

/// LSTM gate weights packed in gate order input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// `[features, 4 * hidden]`
    pub input_weight: Tensor<T>,
    /// `[hidden, 4 * hidden]`
    pub hidden_weight: Tensor<T>,
    /// `[4 * hidden]`
    pub bias: Tensor<T>,
    /// `[hidden, 1]`
    pub proj_weight: Tensor<T>,
    /// `[1]`
    pub proj_bias: Tensor<T>,
}

impl<T: Float> LstmParams<T> {
    pub fn new<R: Rng + ?Sized>(features: usize, hidden: usize, rng: &mut R) -> Self {
        use crate::nn::he_init;
        LstmParams {
            input_weight: he_init(&[features, 4 * hidden], features + hidden, rng),
            hidden_weight: he_init(&[hidden, 4 * hidden], features + hidden, rng),
            bias: Tensor::zeros([4 * hidden]),
            proj_weight: he_init(&[hidden, 1], hidden, rng),
            proj_bias: Tensor::zeros([1]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden_weight.shape()[0]
    }

    pub fn zeros(features: usize, hidden: usize) -> Self {
        LstmParams {
            input_weight: Tensor::zeros([features, 4 * hidden]),
            hidden_weight: Tensor::zeros([hidden, 4 * hidden]),
            bias: Tensor::zeros([4 * hidden]),
            proj_weight: Tensor::zeros([hidden, 1]),
            proj_bias: Tensor::zeros([1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams<T> {
    Tcn(TcnParams<T>),
    Lstm(LstmParams<T>),
}

/// Builds He-initialized parameters for `config`.
pub fn build_model<T: Float, R: Rng + ?Sized>(
    config: &ModelConfig,
    rng: &mut R,
) -> Result<ModelParams<T>> {
    config.validate()?;
    let [h1, h2] = config.head_channels;
    match config.variant {
        Variant::Lstm => Ok(ModelParams::Lstm(LstmParams::new(
            1,
            config.lstm_hidden,
            rng,
        ))),
        Variant::Proposed2d => Ok(ModelParams::Tcn(build_planar(config, rng)?)),
        Variant::Tcn1d => {
            let mut blocks = Vec::with_capacity(config.block_channels.len());
            let mut prev = 1;
            for (&ch, &dil) in config.block_channels.iter().zip(&config.dilations) {
                blocks.push(TemporalBlockParams::new_1d(
                    prev,
                    ch,
                    config.kernel.0,
                    dil,
                    config.causal,
                    config.dropout_p,
                    rng,
                )?);
                prev = ch;
            }
            let same = Conv1dGeometry::same(3, 1, config.causal)?;
            let point = Conv1dGeometry::same(1, 1, false)?;
            let regression = [
                ConvParams::conv1d(prev, h1, 3, same, rng),
                ConvParams::conv1d(h1, h2, 3, same, rng),
                ConvParams::conv1d(h2, 1, 1, point, rng),
            ];
            let reconstruction = [
                ConvParams::conv1d(prev, h1, 3, same, rng),
                ConvParams::conv1d(h1, h2, 3, same, rng),
                ConvParams::conv1d(h2, 1, 3, same, rng),
            ];
            Ok(ModelParams::Tcn(TcnParams {
                blocks,
                regression,
                reconstruction,
            }))
        }
    }
}

/// 2-D network without the fixed-width check, so tests can shrink it.
pub(crate) fn build_planar<T: Float, R: Rng + ?Sized>(
    config: &ModelConfig,
    rng: &mut R,
) -> Result<TcnParams<T>> {
    let [h1, h2] = config.head_channels;
    let mut blocks = Vec::with_capacity(config.block_channels.len());
    let mut prev = 1;
    for (&ch, &dil) in config.block_channels.iter().zip(&config.dilations) {
        blocks.push(TemporalBlockParams::new_2d(
            prev,
            ch,
            config.kernel,
            dil,
            config.causal,
            config.dropout_p,
            rng,
        )?);
        prev = ch;
    }
    let same = Conv2dGeometry::same((3, 3), (1, 1), config.causal)?;
    let m = config.patch_width;
    let regression = [
        ConvParams::conv2d(prev, h1, (3, 3), same, rng),
        ConvParams::conv2d(h1, h2, (3, 3), same, rng),
        ConvParams::conv2d(h2, 1, (1, m), Conv2dGeometry::valid(), rng),
    ];
    let reconstruction = [
        ConvParams::conv2d(prev, h1, (3, 3), same, rng),
        ConvParams::conv2d(h1, h2, (3, 3), same, rng),
        ConvParams::conv2d(h2, 1, (3, 3), same, rng),
    ];
    Ok(TcnParams {
        blocks,
        regression,
        reconstruction,
    })
}

impl<T: Float> ModelParams<T> {
    /// Every parameter tensor with a stable dotted name, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        match self {
            ModelParams::Tcn(p) => {
                for (i, b) in p.blocks.iter().enumerate() {
                    b.visit(&format!("blocks.{i}"), &mut out);
                }
                for (i, c) in p.regression.iter().enumerate() {
                    c.visit(&format!("regression.{i}"), &mut out);
                }
                for (i, c) in p.reconstruction.iter().enumerate() {
                    c.visit(&format!("reconstruction.{i}"), &mut out);
                }
            }
            ModelParams::Lstm(p) => {
                out.push(("lstm.input_weight".into(), &p.input_weight));
                out.push(("lstm.hidden_weight".into(), &p.hidden_weight));
                out.push(("lstm.bias".into(), &p.bias));
                out.push(("lstm.proj_weight".into(), &p.proj_weight));
                out.push(("lstm.proj_bias".into(), &p.proj_bias));
            }
        }
        out
    }

    /// Mutable view in the same order as [`ModelParams::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        match self {
            ModelParams::Tcn(p) => {
                for b in &mut p.blocks {
                    b.visit_mut(&mut out);
                }
                for c in p.regression.iter_mut().chain(p.reconstruction.iter_mut()) {
                    c.visit_mut(&mut out);
                }
            }
            ModelParams::Lstm(p) => {
                out.push(&mut p.input_weight);
                out.push(&mut p.hidden_weight);
                out.push(&mut p.bias);
                out.push(&mut p.proj_weight);
                out.push(&mut p.proj_bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over names, shapes and values (as `f64` bit patterns).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_params() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Mirrors [`ModelParams::bind`] over vars the caller already registered,
    /// given in the order of [`ModelParams::named_params`].
    pub fn bind_to(&self, vars: &[Var]) -> ModelVars {
        let mut g = Graph::new();
        let template = self.bind(&mut g, false);
        let map = |v: Var| vars[v.index()];
        match template {
            ModelVars::Tcn {
                blocks,
                regression,
                reconstruction,
            } => {
                let cv = |c: ConvVars| ConvVars {
                    weight: map(c.weight),
                    bias: map(c.bias),
                    geometry: c.geometry,
                };
                ModelVars::Tcn {
                    blocks: blocks
                        .into_iter()
                        .map(|b| TemporalBlockVars {
                            conv1: cv(b.conv1),
                            conv2: cv(b.conv2),
                            downsample: b.downsample.map(cv),
                            dropout_p: b.dropout_p,
                        })
                        .collect(),
                    regression: regression.map(cv),
                    reconstruction: reconstruction.map(cv),
                }
            }
            ModelVars::Lstm(l) => ModelVars::Lstm(LstmVars {
                input_weight: map(l.input_weight),
                hidden_weight: map(l.hidden_weight),
                bias: map(l.bias),
                proj_weight: map(l.proj_weight),
                proj_bias: map(l.proj_bias),
                hidden: l.hidden,
            }),
        }
    }

    /// Registers every parameter on `g`; leaves if `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ModelVars {
        match self {
            ModelParams::Tcn(p) => {
                let blocks = p.blocks.iter().map(|b| b.bind(g, trainable)).collect();
                let regression = [
                    p.regression[0].bind(g, trainable),
                    p.regression[1].bind(g, trainable),
                    p.regression[2].bind(g, trainable),
                ];
                let reconstruction = [
                    p.reconstruction[0].bind(g, trainable),
                    p.reconstruction[1].bind(g, trainable),
                    p.reconstruction[2].bind(g, trainable),
                ];
                ModelVars::Tcn {
                    blocks,
                    regression,
                    reconstruction,
                }
            }
            ModelParams::Lstm(p) => {
                let mut reg = |t: &Tensor<T>| {
                    if trainable {
                        g.leaf(t.clone())
                    } else {
                        g.constant(t.clone())
                    }
                };
                ModelVars::Lstm(LstmVars {
                    input_weight: reg(&p.input_weight),
                    hidden_weight: reg(&p.hidden_weight),
                    bias: reg(&p.bias),
                    proj_weight: reg(&p.proj_weight),
                    proj_bias: reg(&p.proj_bias),
                    hidden: p.hidden(),
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input_weight: Var,
    pub hidden_weight: Var,
    pub bias: Var,
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub enum ModelVars {
    Tcn {
        blocks: Vec<TemporalBlockVars>,
        regression: [ConvVars; 3],
        reconstruction: [ConvVars; 3],
    },
    Lstm(LstmVars),
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// Estimated property traces `[B, d]`.
    pub y_hat: Var,
    /// Reconstructed input `[B, 1, d, w]`; absent for the LSTM.
    pub x_hat: Option<Var>,
    /// What `x_hat` reconstructs: the full patch for the 2-D model, the
    /// center trace `[B, 1, d, 1]` for the 1-D TCN.
    pub x_target: Option<Var>,
}

fn apply_head<T: Float>(g: &mut Graph<T>, head: &[ConvVars; 3], x: Var) -> Result<Var> {
    let h = head[0].forward(g, x)?;
    let h = g.relu(h)?;
    let h = head[1].forward(g, h)?;
    let h = g.relu(h)?;
    head[2].forward(g, h)
}

impl ModelVars {
    /// Parameter vars in the order of [`ModelParams::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        match self {
            ModelVars::Tcn {
                blocks,
                regression,
                reconstruction,
            } => {
                for b in blocks {
                    b.vars(&mut out);
                }
                for c in regression.iter().chain(reconstruction) {
                    c.vars(&mut out);
                }
            }
            ModelVars::Lstm(l) => out.extend([
                l.input_weight,
                l.hidden_weight,
                l.bias,
                l.proj_weight,
                l.proj_bias,
            ]),
        }
        out
    }

    /// Runs the model on a patch batch `[B, 1, d, w]`.
    ///
    /// The 2-D model needs `w == config.patch_width`; the 1-D variants accept
    /// any odd `w` and read only the center trace.
    pub fn forward<T: Float, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        config: &ModelConfig,
        patches: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<ModelOutput> {
        let shape = g.shape(patches).to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::shape("model input", &shape, &[0, 1, 0, 0]));
        }
        let (b, d, w) = (shape[0], shape[2], shape[3]);
        if let Some(depth) = config.depth {
            if d != depth {
                return Err(Error::shape("model input depth", &shape, &[b, 1, depth, w]));
            }
        }
        match (self, config.variant) {
            (
                ModelVars::Tcn {
                    blocks,
                    regression,
                    reconstruction,
                },
                Variant::Proposed2d,
            ) => {
                if w != config.patch_width {
                    return Err(Error::shape(
                        "model input width",
                        &shape,
                        &[b, 1, d, config.patch_width],
                    ));
                }
                let mut h = patches;
                for block in blocks {
                    h = block.forward(g, h, training, rng)?;
                }
                let y = apply_head(g, regression, h)?;
                let y_hat = g.reshape(y, [b, d])?;
                let x_hat = apply_head(g, reconstruction, h)?;
                Ok(ModelOutput {
                    y_hat,
                    x_hat: Some(x_hat),
                    x_target: Some(patches),
                })
            }
            (
                ModelVars::Tcn {
                    blocks,
                    regression,
                    reconstruction,
                },
                Variant::Tcn1d,
            ) => {
                let center = center_trace(g, patches)?;
                let mut h = g.reshape(center, [b, 1, d])?;
                for block in blocks {
                    h = block.forward(g, h, training, rng)?;
                }
                let y = apply_head(g, regression, h)?;
                let y_hat = g.reshape(y, [b, d])?;
                let x = apply_head(g, reconstruction, h)?;
                let x_hat = g.reshape(x, [b, 1, d, 1])?;
                Ok(ModelOutput {
                    y_hat,
                    x_hat: Some(x_hat),
                    x_target: Some(center),
                })
            }
            (ModelVars::Lstm(l), Variant::Lstm) => {
                let center = center_trace(g, patches)?;
                let seq = g.reshape(center, [b, d, 1])?;
                let y_hat = lstm_forward(g, l, seq)?;
                Ok(ModelOutput {
                    y_hat,
                    x_hat: None,
                    x_target: None,
                })
            }
            (_, variant) => Err(Error::config(
                "variant",
                format!("parameters do not match variant {variant}"),
            )),
        }
    }
}

/// `[B, 1, d, w]` -> `[B, 1, d, 1]` at column `w / 2` (`w` odd).
fn center_trace<T: Float>(g: &mut Graph<T>, patches: Var) -> Result<Var> {
    let w = g.shape(patches)[3];
    if w.is_multiple_of(2) {
        return Err(Error::config(
            "patch_width",
            format!("must be odd, got {w}"),
        ));
    }
    if w == 1 {
        return Ok(patches);
    }
    g.narrow(patches, 3, w / 2, 1)
}

/// Unidirectional LSTM over `seq [B, d, F]` from a zero state, projecting
/// each hidden state to one output: returns `[B, d]`.
pub fn lstm_forward<T: Float>(g: &mut Graph<T>, p: &LstmVars, seq: Var) -> Result<Var> {
    let shape = g.shape(seq).to_vec();
    let features = g.shape(p.input_weight)[0];
    if shape.len() != 3 || shape[2] != features {
        return Err(Error::shape("lstm input", &shape, &[0, 0, features]));
    }
    let (b, d, hdim) = (shape[0], shape[1], p.hidden);
    let bias = g.repeat_rows(p.bias, b)?;
    let mut h = g.constant(Tensor::zeros([b, hdim]));
    let mut c = g.constant(Tensor::zeros([b, hdim]));
    let mut outputs = Vec::with_capacity(d);
    for t in 0..d {
        let xt = g.narrow(seq, 1, t, 1)?;
        let xt = g.reshape(xt, [b, features])?;
        let zx = g.matmul(xt, p.input_weight)?;
        let zh = g.matmul(h, p.hidden_weight)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, bias)?;
        let zi = g.narrow(z, 1, 0, hdim)?;
        let zf = g.narrow(z, 1, hdim, hdim)?;
        let zg = g.narrow(z, 1, 2 * hdim, hdim)?;
        let zo = g.narrow(z, 1, 3 * hdim, hdim)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let gg = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, gg)?;
        c = g.add(fc, ig)?;
        let tc = g.tanh(c)?;
        h = g.mul(o, tc)?;
        let y = g.matmul(h, p.proj_weight)?;
        outputs.push(g.add(y, p.proj_bias)?);
    }
    g.concat(&outputs, 1)
}

/// Forward pass without gradient tracking. Returns `y_hat [B, d]` and the
/// reconstruction, if the variant has one.
pub fn model_forward<T: Float, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    patches: &Tensor<T>,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.constant(patches.clone());
    let out = vars.forward(&mut g, config, x, training, rng)?;
    let y = g.value(out.y_hat).clone();
    let x_hat = out.x_hat.map(|v| g.value(v).clone());
    Ok((y, x_hat))
}
