//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only evaluates forward values, so it stays independent
//! of every backward rule it checks.

use super::{GradError, Graph, Tensor, Var};

/// Builds a scalar from leaves already placed on the graph.
pub trait Probe: Fn(&mut Graph, &[Var]) -> Result<Var, GradError> {}
impl<F: Fn(&mut Graph, &[Var]) -> Result<Var, GradError>> Probe for F {}

fn evaluate(inputs: &[Tensor], build: &impl Probe) -> Result<f64, GradError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Analytic gradient of `build` with respect to every input.
pub fn analytic(inputs: &[Tensor], build: &impl Probe) -> Result<Vec<Tensor>, GradError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    Ok(vars
        .iter()
        .map(|v| grads.take(*v).expect("param leaf has a gradient"))
        .collect())
}

/// Central differences of `build` with respect to `inputs[which]`, for the
/// listed flat element indices (all elements when `indices` is `None`).
pub fn numeric(
    inputs: &[Tensor],
    which: usize,
    indices: Option<&[usize]>,
    step: f64,
    build: &impl Probe,
) -> Result<Vec<f64>, GradError> {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..inputs[which].len()).collect();
            &all
        }
    };
    let mut work = inputs.to_vec();
    idx.iter()
        .map(|&i| {
            let orig = inputs[which].data()[i];
            work[which].data_mut()[i] = orig + step;
            let up = evaluate(&work, build)?;
            work[which].data_mut()[i] = orig - step;
            let down = evaluate(&work, build)?;
            work[which].data_mut()[i] = orig;
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst norm-wise relative error over all inputs.
pub fn max_relative_error(
    inputs: &[Tensor],
    step: f64,
    build: &impl Probe,
) -> Result<f64, GradError> {
    let analytic = analytic(inputs, build)?;
    let mut worst: f64 = 0.0;
    for (which, a) in analytic.iter().enumerate() {
        let n = numeric(inputs, which, None, step, build)?;
        worst = worst.max(relative_error(a.data(), &n));
    }
    Ok(worst)
}
