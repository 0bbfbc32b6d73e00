//! Central finite-difference verification of [`QNetwork::backward_sequence`].
//!
//! The probe loss is `L = 0.5 * sum_t |q_t - y_t|^2` over a sequence run from a
//! zero recurrent state, so `dL/dq_t = q_t - y_t`.

use super::network::{GradientSet, QNetwork, StepCache, Tensors};
use crate::error::Result;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub checked: usize,
    /// Maximum relative error per tensor, in [`Tensors::NAMES`] order.
    pub per_tensor: Vec<(&'static str, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    pub fn tensor_error(&self, name: &str) -> Option<f64> {
        self.per_tensor.iter().find(|(n, _)| *n == name).map(|(_, e)| *e)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

pub fn probe_loss(net: &QNetwork, xs: &[&[f64]], ys: &[Vec<f64>]) -> Result<f64> {
    let (qs, _) = net.forward_sequence(xs)?;
    Ok(qs
        .iter()
        .zip(ys)
        .flat_map(|(q, y)| q.iter().zip(y).map(|(a, b)| 0.5 * (a - b) * (a - b)))
        .sum())
}

/// Compares `backward` against central differences with step `eps` on every
/// parameter.
pub fn grad_check_with<B>(
    net: &QNetwork,
    xs: &[&[f64]],
    ys: &[Vec<f64>],
    eps: f64,
    backward: B,
) -> Result<GradCheckReport>
where
    B: Fn(&QNetwork, &[StepCache], &[Vec<f64>]) -> Result<GradientSet>,
{
    let (qs, caches) = net.forward_sequence(xs)?;
    let dq: Vec<Vec<f64>> = qs
        .iter()
        .zip(ys)
        .map(|(q, y)| q.iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    let analytic = backward(net, &caches, &dq)?;

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: Tensors::NAMES[0],
        worst_index: 0,
        checked: 0,
        per_tensor: Vec::with_capacity(Tensors::NAMES.len()),
    };
    for (ti, name) in Tensors::NAMES.iter().enumerate() {
        let n = analytic.grads.slices()[ti].len();
        let mut tensor_max = 0.0f64;
        for k in 0..n {
            let orig = probe.params.slices()[ti][k];
            probe.params.slices_mut()[ti][k] = orig + eps;
            let plus = probe_loss(&probe, xs, ys)?;
            probe.params.slices_mut()[ti][k] = orig - eps;
            let minus = probe_loss(&probe, xs, ys)?;
            probe.params.slices_mut()[ti][k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = rel_error(analytic.grads.slices()[ti][k], numeric);
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = name;
                report.worst_index = k;
            }
            report.checked += 1;
        }
        report.per_tensor.push((name, tensor_max));
    }
    Ok(report)
}

pub fn grad_check(net: &QNetwork, xs: &[&[f64]], ys: &[Vec<f64>], eps: f64) -> Result<GradCheckReport> {
    grad_check_with(net, xs, ys, eps, |n, c, d| n.backward_sequence(c, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{init_network, NetShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(t: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..t)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys = (0..t)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        (xs, ys)
    }

    fn perturbed(shape: NetShape, seed: u64) -> QNetwork {
        // Standard init plus noise so no gradient is trivially zero.
        let mut net = init_network(shape, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in net.params.slices_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        net
    }

    #[test]
    fn linear_output_layer() {
        // The probe loss is quadratic in the output layer, so central
        // differences there are exact up to rounding.
        let shape = NetShape::new(3, 4, 4, 3);
        let net = perturbed(shape, 1);
        let (xs, ys) = inputs(3, 3, 2);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let r = grad_check(&net, &refs, &ys, 1e-5).unwrap();
        assert!(r.tensor_error("w_out").unwrap() < 1e-8, "{r:?}");
        assert!(r.tensor_error("b_out").unwrap() < 1e-8, "{r:?}");
        assert_eq!(r.per_tensor.len(), 9);
    }

    #[test]
    fn full_tiny_network() {
        let shape = NetShape::new(6, 4, 4, 3);
        let net = perturbed(shape, 7);
        let (xs, ys) = inputs(5, 6, 8);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let r = grad_check(&net, &refs, &ys, 1e-5).unwrap();
        assert_eq!(r.checked, shape.param_count());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let shape = NetShape::new(6, 4, 4, 3);
        let net = perturbed(shape, 7);
        let (xs, ys) = inputs(5, 6, 8);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let r = grad_check_with(&net, &refs, &ys, 1e-5, |n, c, d| {
            let mut g = n.backward_sequence(c, d)?;
            g.grads.wh.iter_mut().for_each(|v| *v *= 1.1);
            Ok(g)
        })
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
        assert_eq!(r.worst_tensor, "lstm_wh");
    }
}
