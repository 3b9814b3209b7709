use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Decoupled: applied to the parameter directly, not folded into the
    /// gradient moments.
    pub weight_decay: f64,
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    /// Zero moments mirroring `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam update with decoupled weight decay:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
pub fn adam_step<T: Float>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hp: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            &[params.len()],
            &[grads.len(), state.m.len()],
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let (b1, b2) = hp.betas;
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = f(g.data()[i]);
            let mi = b1 * f(md[i]) + (1.0 - b1) * gi;
            let vi = b2 * f(vd[i]) + (1.0 - b2) * gi * gi;
            md[i] = T::from_f64_lossy(mi);
            vd[i] = T::from_f64_lossy(vi);
            let theta = f(pd[i]);
            let step = (mi / c1) / ((vi / c2).sqrt() + hp.eps) + hp.weight_decay * theta;
            pd[i] = T::from_f64_lossy(theta - hp.lr * step);
        }
    }
    Ok(())
}
