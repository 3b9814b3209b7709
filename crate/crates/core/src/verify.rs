//! Randomized central-difference checks over every differentiable op, from
//! single elementwise nodes up to whole models at tiny sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{build_model, build_planar, ModelConfig, ModelParams, Variant};
use crate::nn::{he_init, TemporalBlockParams, TemporalBlockVars};
use crate::tensor::{
    gradient_check, Conv1dGeometry, Conv2dGeometry, GradCheckReport, Graph, Tensor, Var,
};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

/// Aggregate over all trials of one op.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    /// Scalar partials compared across all trials.
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Case = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;

const CASES: &[(&str, Case)] = &[
    ("add", |r| binary(r, |g, a, b| g.add(a, b))),
    ("sub", |r| binary(r, |g, a, b| g.sub(a, b))),
    ("mul", |r| binary(r, |g, a, b| g.mul(a, b))),
    ("scale", |r| {
        let s = r.random_range(-3.0..3.0);
        unary(r, false, move |g, a| g.scale(a, s))
    }),
    ("relu", |r| unary(r, true, |g, a| g.relu(a))),
    ("sigmoid", |r| unary(r, false, |g, a| g.sigmoid(a))),
    ("tanh", |r| unary(r, false, |g, a| g.tanh(a))),
    ("matmul", matmul),
    ("mse", mse),
    ("narrow_concat", narrow_concat),
    ("repeat_rows", repeat_rows),
    ("conv2d", conv2d),
    ("conv1d", conv1d),
    ("temporal_block_2d", |r| temporal_block(r, true)),
    ("temporal_block_1d", |r| temporal_block(r, false)),
    ("lstm", |r| model(r, Variant::Lstm)),
    ("model_proposed2d", |r| model(r, Variant::Proposed2d)),
    ("model_tcn1d", |r| model(r, Variant::Tcn1d)),
];

/// Names of the ops [`gradient_suite`] covers, in trial order.
pub fn suite_ops() -> Vec<&'static str> {
    CASES.iter().map(|(name, _)| *name).collect()
}

/// Runs `trials` randomized checks, cycling through the ops. Trial `i`
/// draws its shapes and values from stream `i` of `seed`.
pub fn gradient_suite(seed: u64, trials: usize) -> Result<Vec<OpCheck>> {
    let mut out: Vec<OpCheck> = CASES
        .iter()
        .map(|(op, _)| OpCheck {
            op,
            trials: 0,
            checked: 0,
            max_rel_error: 0.0,
            passed: true,
        })
        .collect();
    for i in 0..trials {
        let k = i % CASES.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let report = (CASES[k].1)(&mut rng)?;
        let agg = &mut out[k];
        agg.trials += 1;
        agg.checked += report.checked;
        agg.max_rel_error = agg.max_rel_error.max(report.max_rel_error);
        agg.passed &= report.passed;
    }
    out.retain(|c| c.trials > 0);
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.5..1.5))
}

/// Values bounded away from zero, for kinked ops.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(1..=4))
        .collect()
}

/// Contracts `y` with fixed random weights so every output element
/// contributes a distinct partial.
fn project(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check<F>(rng: &mut ChaCha8Rng, out_shape: Vec<usize>, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let weights = uniform(rng, &out_shape);
    gradient_check(
        |g, v| {
            let y = f(g, v)?;
            project(g, y, &weights)
        },
        inputs,
        STEP,
        GRADIENT_TOLERANCE,
    )
}

fn binary(
    rng: &mut ChaCha8Rng,
    op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let shape = small_shape(rng);
    let inputs = [uniform(rng, &shape), uniform(rng, &shape)];
    check(rng, shape, &inputs, |g, v| op(g, v[0], v[1]))
}

fn unary<F>(rng: &mut ChaCha8Rng, kinked: bool, op: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let shape = small_shape(rng);
    let x = if kinked {
        off_zero(rng, &shape)
    } else {
        uniform(rng, &shape)
    };
    check(rng, shape, &[x], |g, v| op(g, v[0]))
}

fn matmul(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (m, k, n) = (
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    );
    let inputs = [uniform(rng, &[m, k]), uniform(rng, &[k, n])];
    check(rng, vec![m, n], &inputs, |g, v| g.matmul(v[0], v[1]))
}

fn mse(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let shape = small_shape(rng);
    let inputs = [uniform(rng, &shape), uniform(rng, &shape)];
    gradient_check(|g, v| g.mse(v[0], v[1]), &inputs, STEP, GRADIENT_TOLERANCE)
}

fn narrow_concat(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (rows, a, b) = (
        rng.random_range(1..=3),
        rng.random_range(2..=4),
        rng.random_range(1..=3),
    );
    let start = rng.random_range(0..a - 1);
    let len = rng.random_range(1..=a - start);
    let inputs = [uniform(rng, &[rows, a]), uniform(rng, &[rows, b])];
    check(rng, vec![rows * (len + b)], &inputs, |g, v| {
        let part = g.narrow(v[0], 1, start, len)?;
        let joined = g.concat(&[part, v[1]], 1)?;
        g.reshape(joined, [rows * (len + b)])
    })
}

fn repeat_rows(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, rows) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let inputs = [uniform(rng, &[n])];
    check(rng, vec![rows, n], &inputs, |g, v| g.repeat_rows(v[0], rows))
}

fn conv2d(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (b, c, o) = (
        rng.random_range(1..=2),
        rng.random_range(1..=2),
        rng.random_range(1..=3),
    );
    let kernel = (
        2 * rng.random_range(0..=1) + 1,
        2 * rng.random_range(0..=1) + 1,
    );
    let dilation = (rng.random_range(1..=2), 1);
    let causal = rng.random_bool(0.5);
    let geom = Conv2dGeometry::same(kernel, dilation, causal)?;
    let (h, w) = (rng.random_range(3..=6), rng.random_range(1..=3));
    let inputs = [
        uniform(rng, &[b, c, h, w]),
        uniform(rng, &[o, c, kernel.0, kernel.1]),
        uniform(rng, &[o]),
    ];
    check(rng, vec![b, o, h, w], &inputs, |g, v| {
        g.conv2d(v[0], v[1], v[2], geom)
    })
}

fn conv1d(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (b, c, o) = (
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
    );
    let k = 2 * rng.random_range(0..=1) + 1;
    let geom = Conv1dGeometry::same(k, rng.random_range(1..=3), rng.random_bool(0.5))?;
    let len = rng.random_range(3..=7);
    let inputs = [
        uniform(rng, &[b, c, len]),
        uniform(rng, &[o, c, k]),
        uniform(rng, &[o]),
    ];
    check(rng, vec![b, o, len], &inputs, |g, v| {
        g.conv1d(v[0], v[1], v[2], geom)
    })
}

/// Adds O(1) noise so ReLU pre-activations sit away from the kink.
fn jitter(rng: &mut ChaCha8Rng, tensors: &mut [&mut Tensor<f64>]) {
    for t in tensors {
        let noise: Tensor<f64> = he_init(t.shape(), 50, rng);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
}

fn temporal_block(rng: &mut ChaCha8Rng, planar: bool) -> Result<GradCheckReport> {
    let (cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let dilation = rng.random_range(1..=2);
    let causal = rng.random_bool(0.5);
    let kh = if causal { rng.random_range(2..=3) } else { 3 };
    let h = rng.random_range(4..=6);
    let (mut block, x_shape, out_shape) = if planar {
        let w = rng.random_range(1..=3);
        (
            TemporalBlockParams::new_2d(cin, cout, (kh, 3), dilation, causal, 0.0, rng)?,
            vec![1, cin, h, w],
            vec![1, cout, h, w],
        )
    } else {
        (
            TemporalBlockParams::new_1d(cin, cout, kh, dilation, causal, 0.0, rng)?,
            vec![2, cin, h],
            vec![2, cout, h],
        )
    };
    let mut params = Vec::new();
    block.visit_mut(&mut params);
    jitter(rng, &mut params);
    let mut named = Vec::new();
    block.visit("b", &mut named);
    let mut inputs = vec![uniform(rng, &x_shape)];
    inputs.extend(named.iter().map(|(_, t)| (*t).clone()));
    check(rng, out_shape, &inputs, |g, v| {
        let template = block.bind(&mut Graph::<f64>::new(), false);
        let bound = remap_block(&template, &v[1..]);
        bound.forward(g, v[0], false, &mut ChaCha8Rng::seed_from_u64(0))
    })
}

fn remap_block(b: &TemporalBlockVars, vars: &[Var]) -> TemporalBlockVars {
    let mut order = Vec::new();
    b.vars(&mut order);
    let map = |v: Var| vars[order.iter().position(|&o| o == v).expect("bound var")];
    let cv = |c: crate::nn::ConvVars| crate::nn::ConvVars {
        weight: map(c.weight),
        bias: map(c.bias),
        geometry: c.geometry,
    };
    TemporalBlockVars {
        conv1: cv(b.conv1),
        conv2: cv(b.conv2),
        downsample: b.downsample.map(cv),
        dropout_p: b.dropout_p,
    }
}

fn model(rng: &mut ChaCha8Rng, variant: Variant) -> Result<GradCheckReport> {
    let depth = rng.random_range(4..=6);
    let config = ModelConfig {
        variant,
        patch_width: 3,
        depth: None,
        block_channels: vec![2, 3],
        dilations: vec![1, 2],
        kernel: (3, 3),
        causal: rng.random_bool(0.5),
        dropout_p: 0.0,
        head_channels: [3, 2],
        lstm_hidden: rng.random_range(2..=4),
    };
    let mut params: ModelParams<f64> = match variant {
        // the fixed 120-channel feature width is too large to difference
        Variant::Proposed2d => ModelParams::Tcn(build_planar(&config, rng)?),
        _ => build_model(&config, rng)?,
    };
    jitter(rng, &mut params.params_mut());
    let b = rng.random_range(1..=2);
    let w = if variant == Variant::Proposed2d { 3 } else { 1 };
    let x = uniform(rng, &[b, 1, depth, w]);
    let y = uniform(rng, &[b, depth]);
    let mut inputs = vec![x];
    inputs.extend(params.named_params().into_iter().map(|(_, t)| t.clone()));
    gradient_check(
        |g, v| {
            let vars = params.bind_to(&v[1..]);
            let out = vars.forward(g, &config, v[0], false, &mut ChaCha8Rng::seed_from_u64(0))?;
            let target = g.constant(y.clone());
            let mut loss = g.mse(out.y_hat, target)?;
            if let (Some(xh), Some(xt)) = (out.x_hat, out.x_target) {
                let lx = g.mse(xh, xt)?;
                let lx = g.scale(lx, 0.5)?;
                loss = g.add(loss, lx)?;
            }
            Ok(loss)
        },
        &inputs,
        STEP,
        GRADIENT_TOLERANCE,
    )
}
