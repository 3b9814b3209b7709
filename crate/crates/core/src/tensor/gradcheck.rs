use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Number of scalar partial derivatives compared.
    pub checked: usize,
    /// `(input index, element index)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

/// Checks the gradient of the scalar function `f` with respect to every
/// element of every input.
///
/// `f` builds its computation on the graph it is handed, from the input
/// vars in order, and returns a scalar var. Each partial is compared with
/// `(f(x + h) - f(x - h)) / 2h`.
pub fn gradient_check<F>(f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.take_grad(v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).data()[0])
    };

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tolerance: tol,
        passed: true,
        checked: 0,
        worst: None,
    };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
