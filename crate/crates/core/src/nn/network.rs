//! The recurrent Q-network: `dense+ELU -> dense+ELU -> LSTM -> linear`.
//!
//! LSTM gate rows are fused into `4 * lstm` rows ordered input, forget, output,
//! candidate. All matrices are row-major `out x in`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::{axpy, matvec, matvec_t_acc, outer_acc, sigmoid};
use crate::error::{Error, Result};

/// Non-zero incoming weights per output unit at initialization.
pub const OUTPUT_SPARSITY: usize = 15;
/// Variance of the non-zero output weights at initialization.
pub const OUTPUT_INIT_VARIANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub lstm: usize,
    pub output: usize,
}

impl NetShape {
    /// 198 -> 256 -> 256 -> LSTM 256 -> 3.
    pub const STANDARD: NetShape = NetShape {
        input: crate::features::STATE_DIM,
        hidden: 256,
        lstm: 256,
        output: 3,
    };

    pub fn new(input: usize, hidden: usize, lstm: usize, output: usize) -> Self {
        NetShape {
            input,
            hidden,
            lstm,
            output,
        }
    }

    /// `(rows, cols)` per tensor in [`Tensors::NAMES`] order; biases have one column.
    pub fn tensor_shapes(&self) -> [(usize, usize); 9] {
        let g = 4 * self.lstm;
        [
            (self.hidden, self.input),
            (self.hidden, 1),
            (self.hidden, self.hidden),
            (self.hidden, 1),
            (g, self.hidden),
            (g, self.lstm),
            (g, 1),
            (self.output, self.lstm),
            (self.output, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// One buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub bl: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

impl Tensors {
    pub const NAMES: [&'static str; 9] = ["w1", "b1", "w2", "b2", "lstm_wx", "lstm_wh", "lstm_b", "w_out", "b_out"];

    pub fn zeros(shape: &NetShape) -> Self {
        let s = shape.tensor_shapes();
        let z = |i: usize| vec![0.0; s[i].0 * s[i].1];
        Tensors {
            w1: z(0),
            b1: z(1),
            w2: z(2),
            b2: z(3),
            wx: z(4),
            wh: z(5),
            bl: z(6),
            wo: z(7),
            bo: z(8),
        }
    }

    pub fn slices(&self) -> [&[f64]; 9] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.wx, &self.wh, &self.bl, &self.wo, &self.bo,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wx,
            &mut self.wh,
            &mut self.bl,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.slices().into_iter().flatten()
    }

    fn matches(&self, shape: &NetShape) -> bool {
        self.slices()
            .iter()
            .zip(shape.tensor_shapes())
            .all(|(t, (r, c))| t.len() == r * c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetShape,
    pub params: Tensors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    shape: NetShape,
    pub grads: Tensors,
}

impl GradientSet {
    pub fn zeros(shape: NetShape) -> Self {
        GradientSet {
            shape,
            grads: Tensors::zeros(&shape),
        }
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.grads.slices_mut() {
            t.iter_mut().for_each(|g| *g *= k);
        }
    }

    /// Rescales to `max_norm` if the global norm exceeds it; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}

/// LSTM hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(width: usize) -> Self {
        RecurrentState {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }
}

/// Intermediates of one forward step kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub q: Vec<f64>,
}

impl StepCache {
    pub fn state_out(&self) -> RecurrentState {
        RecurrentState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

impl QNetwork {
    pub fn zeros(shape: NetShape) -> Self {
        QNetwork {
            shape,
            params: Tensors::zeros(&shape),
        }
    }

    pub fn from_tensors(shape: NetShape, params: Tensors) -> Result<Self> {
        if !params.matches(&shape) {
            return Err(Error::Contract("tensor sizes do not match network shape".into()));
        }
        Ok(QNetwork { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    /// He-normal dense and LSTM input weights, identity hidden-to-hidden blocks,
    /// zero biases except forget gates at 1, and a sparse Gaussian output layer.
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Self {
        let mut net = QNetwork::zeros(shape);
        let he = |fan_in: usize| Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let p = &mut net.params;

        let d = he(shape.input);
        p.w1.iter_mut().for_each(|w| *w = d.sample(rng));
        let d = he(shape.hidden);
        p.w2.iter_mut().for_each(|w| *w = d.sample(rng));
        let d = he(shape.hidden);
        p.wx.iter_mut().for_each(|w| *w = d.sample(rng));

        let h = shape.lstm;
        for gate in 0..4 {
            for j in 0..h {
                p.wh[(gate * h + j) * h + j] = 1.0;
            }
        }
        p.bl[h..2 * h].iter_mut().for_each(|b| *b = 1.0);

        let d = Normal::new(0.0, OUTPUT_INIT_VARIANCE.sqrt()).unwrap();
        let nnz = OUTPUT_SPARSITY.min(h);
        for row in p.wo.chunks_exact_mut(h) {
            for j in index::sample(rng, h, nnz) {
                row[j] = d.sample(rng);
            }
        }
        net
    }

    pub fn param_count(&self) -> usize {
        self.shape.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// `Wh * h_prev + b`, shared by every input fed from the same recurrent state.
    fn recurrent_preactivation(&self, state: &RecurrentState) -> Vec<f64> {
        let g = 4 * self.shape.lstm;
        let mut rec = vec![0.0; g];
        matvec(&self.params.wh, g, self.shape.lstm, &state.h, &mut rec);
        axpy(1.0, &self.params.bl, &mut rec);
        rec
    }

    fn forward_with(&self, state_in: &RecurrentState, rec: &[f64], x: &[f64]) -> Result<StepCache> {
        let s = self.shape;
        let p = &self.params;
        let hw = s.lstm;

        let mut z1 = p.b1.clone();
        let mut tmp = vec![0.0; s.hidden];
        matvec(&p.w1, s.hidden, s.input, x, &mut tmp);
        axpy(1.0, &tmp, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| elu(z)).collect();

        let mut z2 = p.b2.clone();
        matvec(&p.w2, s.hidden, s.hidden, &a1, &mut tmp);
        axpy(1.0, &tmp, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&z| elu(z)).collect();

        let mut pre = vec![0.0; 4 * hw];
        matvec(&p.wx, 4 * hw, s.hidden, &a2, &mut pre);
        axpy(1.0, rec, &mut pre);

        let i: Vec<f64> = pre[..hw].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[hw..2 * hw].iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = pre[2 * hw..3 * hw].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[3 * hw..].iter().map(|&v| v.tanh()).collect();
        let c: Vec<f64> = (0..hw).map(|j| f[j] * state_in.c[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hw).map(|j| o[j] * tanh_c[j]).collect();

        let mut q = p.bo.clone();
        let mut qo = vec![0.0; s.output];
        matvec(&p.wo, s.output, hw, &h, &mut qo);
        axpy(1.0, &qo, &mut q);

        if !q.iter().chain(&c).all(|v| v.is_finite()) {
            return Err(Error::NumericalFault("non-finite activation in forward pass".into()));
        }
        Ok(StepCache {
            x: x.to_vec(),
            z1,
            a1,
            z2,
            a2,
            h_prev: state_in.h.clone(),
            c_prev: state_in.c.clone(),
            i,
            f,
            o,
            g,
            c,
            tanh_c,
            h,
            q,
        })
    }

    fn check_input(&self, state: &RecurrentState, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.input {
            return Err(Error::Contract(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.shape.input
            )));
        }
        if state.h.len() != self.shape.lstm || state.c.len() != self.shape.lstm {
            return Err(Error::Contract("recurrent state width mismatch".into()));
        }
        Ok(())
    }

    /// One step from `state_in`; returns Q-values, the new recurrent state and
    /// the cache for [`QNetwork::backward_sequence`].
    pub fn forward_step(&self, state_in: &RecurrentState, x: &[f64]) -> Result<(Vec<f64>, RecurrentState, StepCache)> {
        self.check_input(state_in, x)?;
        let rec = self.recurrent_preactivation(state_in);
        let cache = self.forward_with(state_in, &rec, x)?;
        Ok((cache.q.clone(), cache.state_out(), cache))
    }

    /// Forward step that advances `state` in place without keeping a cache.
    pub fn infer_step(&self, state: &mut RecurrentState, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(state, x)?;
        let rec = self.recurrent_preactivation(state);
        let cache = self.forward_with(state, &rec, x)?;
        state.h = cache.h;
        state.c = cache.c;
        Ok(cache.q)
    }

    /// Q-values for several inputs, each fed from the same recurrent state.
    pub fn q_branches(&self, state_in: &RecurrentState, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let rec = self.recurrent_preactivation(state_in);
        xs.iter()
            .map(|x| {
                self.check_input(state_in, x)?;
                Ok(self.forward_with(state_in, &rec, x)?.q)
            })
            .collect()
    }

    /// Runs `xs` from a zero recurrent state.
    pub fn forward_sequence(&self, xs: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<StepCache>)> {
        if xs.is_empty() {
            return Err(Error::Contract("empty sequence".into()));
        }
        let mut state = RecurrentState::zeros(self.shape.lstm);
        let mut qs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (q, next, cache) = self.forward_step(&state, x)?;
            qs.push(q);
            caches.push(cache);
            state = next;
        }
        Ok((qs, caches))
    }

    /// Backpropagation through time for upstream gradients `dq[t]` on the
    /// Q-values of step `t`.
    pub fn backward_sequence(&self, caches: &[StepCache], dq: &[Vec<f64>]) -> Result<GradientSet> {
        let s = self.shape;
        if caches.len() != dq.len() {
            return Err(Error::Contract(format!(
                "{} caches but {} upstream gradients",
                caches.len(),
                dq.len()
            )));
        }
        if dq.iter().any(|d| d.len() != s.output) || caches.iter().any(|c| c.x.len() != s.input || c.h.len() != s.lstm)
        {
            return Err(Error::Contract("gradient or cache shape mismatch".into()));
        }
        let p = &self.params;
        let hw = s.lstm;
        let mut gs = GradientSet::zeros(s);
        let g = &mut gs.grads;

        let mut dh_next = vec![0.0; hw];
        let mut dc_next = vec![0.0; hw];
        let mut dgates = vec![0.0; 4 * hw];
        let mut da2 = vec![0.0; s.hidden];
        let mut da1 = vec![0.0; s.hidden];
        let mut dz = vec![0.0; s.hidden];

        for (cache, d) in caches.iter().zip(dq).rev() {
            outer_acc(&mut g.wo, s.output, hw, d, &cache.h);
            axpy(1.0, d, &mut g.bo);

            let mut dh = dh_next.clone();
            matvec_t_acc(&p.wo, s.output, hw, d, &mut dh);

            for j in 0..hw {
                let (i, f, o, gg) = (cache.i[j], cache.f[j], cache.o[j], cache.g[j]);
                let tc = cache.tanh_c[j];
                let d_o = dh[j] * tc;
                let dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
                dc_next[j] = dc * f;
                dgates[j] = dc * gg * i * (1.0 - i);
                dgates[hw + j] = dc * cache.c_prev[j] * f * (1.0 - f);
                dgates[2 * hw + j] = d_o * o * (1.0 - o);
                dgates[3 * hw + j] = dc * i * (1.0 - gg * gg);
            }
            outer_acc(&mut g.wx, 4 * hw, s.hidden, &dgates, &cache.a2);
            outer_acc(&mut g.wh, 4 * hw, hw, &dgates, &cache.h_prev);
            axpy(1.0, &dgates, &mut g.bl);

            da2.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&p.wx, 4 * hw, s.hidden, &dgates, &mut da2);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&p.wh, 4 * hw, hw, &dgates, &mut dh_next);

            for j in 0..s.hidden {
                dz[j] = da2[j] * elu_grad(cache.z2[j]);
            }
            outer_acc(&mut g.w2, s.hidden, s.hidden, &dz, &cache.a1);
            axpy(1.0, &dz, &mut g.b2);
            da1.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&p.w2, s.hidden, s.hidden, &dz, &mut da1);

            for j in 0..s.hidden {
                dz[j] = da1[j] * elu_grad(cache.z1[j]);
            }
            outer_acc(&mut g.w1, s.hidden, s.input, &dz, &cache.x);
            axpy(1.0, &dz, &mut g.b1);
        }
        Ok(gs)
    }

    /// `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update_from(&mut self, online: &QNetwork, tau: f64) -> Result<()> {
        if self.shape != online.shape {
            return Err(Error::Contract("soft update between different shapes".into()));
        }
        for (t, o) in self.params.slices_mut().into_iter().zip(online.params.slices()) {
            for (a, b) in t.iter_mut().zip(o) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
        Ok(())
    }
}

/// Seeded standard initialization.
pub fn init_network(shape: NetShape, seed: u64) -> QNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QNetwork::init(shape, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_random(seed: u64, shape: NetShape) -> QNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = QNetwork::zeros(shape);
        for t in net.params.slices_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.6..0.6));
        }
        net
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(2.0), 2.0);
        assert!((elu(-1.0) - (-0.6321205588285577)).abs() < 1e-15);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(NetShape::new(5, 4, 3, 3));
        let (q, _, _) = net
            .forward_step(&RecurrentState::zeros(3), &[1.0, -2.0, 3.0, 0.5, 9.0])
            .unwrap();
        assert_eq!(q, vec![0.0; 3]);
    }

    #[test]
    fn width_one_hand_computed() {
        // Unit weights, zero biases, width 1, single output.
        let shape = NetShape::new(1, 1, 1, 1);
        let mut net = QNetwork::zeros(shape);
        net.params.w1 = vec![1.0];
        net.params.w2 = vec![1.0];
        net.params.wx = vec![1.0; 4];
        net.params.wh = vec![1.0; 4];
        net.params.wo = vec![1.0];
        let x = 0.5f64;
        let a = x; // ELU of positive input twice
        let sig = 1.0 / (1.0 + (-a).exp());
        let c = sig * a.tanh();
        let h = sig * c.tanh();
        let (q, st, _) = net.forward_step(&RecurrentState::zeros(1), &[x]).unwrap();
        assert!((q[0] - h).abs() < 1e-15);
        assert!((st.c[0] - c).abs() < 1e-15);

        // Second step carries the state: every gate sees a + h.
        let pre = a + h;
        let s2 = 1.0 / (1.0 + (-pre).exp());
        let c2 = s2 * c + s2 * pre.tanh();
        let h2 = s2 * c2.tanh();
        let (q2, _, _) = net.forward_step(&st, &[x]).unwrap();
        assert!((q2[0] - h2).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic_and_chains() {
        let shape = NetShape::new(6, 5, 4, 3);
        let net = tiny_random(3, shape);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|t| (0..6).map(|k| ((t * 6 + k) as f64).sin()).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();

        let zero = RecurrentState::zeros(4);
        let (q1, _, _) = net.forward_step(&zero, &xs[0]).unwrap();
        let (q1b, _, _) = net.forward_step(&zero, &xs[0]).unwrap();
        assert_eq!(q1, q1b);

        let (qs, _) = net.forward_sequence(&refs).unwrap();
        assert_eq!(qs[0], q1);

        let (head, _) = net.forward_sequence(&refs[..2]).unwrap();
        let mut st = RecurrentState::zeros(4);
        for x in &refs[..2] {
            net.infer_step(&mut st, x).unwrap();
        }
        let (q2, st2, _) = net.forward_step(&st, refs[2]).unwrap();
        let q3 = net.q_branches(&st2, &[refs[3]]).unwrap();
        assert_eq!(head, qs[..2]);
        assert_eq!(q2, qs[2]);
        assert_eq!(q3[0], qs[3]);
    }

    #[test]
    fn output_bias_gradient_sums_upstream() {
        let shape = NetShape::new(4, 3, 3, 3);
        let net = tiny_random(9, shape);
        let xs = [[0.1, 0.2, -0.3, 0.4], [0.0, -1.0, 0.5, 0.2], [1.0, 0.3, 0.2, -0.1]];
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, caches) = net.forward_sequence(&refs).unwrap();
        let dq = vec![vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 1.0], vec![-0.25, 0.0, 3.0]];
        let g = net.backward_sequence(&caches, &dq).unwrap();
        assert_eq!(g.grads.bo, vec![1.25, 0.0, 6.0]);

        let zero = net.backward_sequence(&caches, &vec![vec![0.0; 3]; 3]).unwrap();
        assert!(zero.grads.iter().all(|&v| v == 0.0));
        assert!(net.backward_sequence(&caches, &dq[..2]).is_err());
    }

    #[test]
    fn init_structure() {
        let net = init_network(NetShape::STANDARD, 1);
        let h = 256;
        assert!(net.params.bl[h..2 * h].iter().all(|&b| b == 1.0));
        assert!(net.params.bl[..h]
            .iter()
            .chain(&net.params.bl[2 * h..])
            .all(|&b| b == 0.0));
        for gate in 0..4 {
            for r in 0..h {
                for c in 0..h {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert_eq!(net.params.wh[(gate * h + r) * h + c], expect);
                }
            }
        }
        for row in net.params.wo.chunks(h) {
            assert_eq!(row.iter().filter(|&&w| w != 0.0).count(), OUTPUT_SPARSITY);
        }
        assert!(net
            .params
            .b1
            .iter()
            .chain(&net.params.b2)
            .chain(&net.params.bo)
            .all(|&b| b == 0.0));
        assert_eq!(init_network(NetShape::STANDARD, 1), net);
        assert_ne!(init_network(NetShape::STANDARD, 2).params.w1, net.params.w1);
    }

    #[test]
    fn parameter_count_audit() {
        let s = NetShape::STANDARD;
        let dense1 = 198 * 256 + 256;
        let dense2 = 256 * 256 + 256;
        let lstm = 4 * (256 * 256 + 256 * 256 + 256);
        let out = 256 * 3 + 3;
        assert_eq!(s.param_count(), dense1 + dense2 + lstm + out);
        assert_eq!(s.param_count(), 642_819);
    }

    #[test]
    fn lstm_cell_retention() {
        // Identity recurrence, zero input path, forget bias 1: every gate
        // pre-activation is h_prev (+1 for forget), so c' = σ(h+1)·c + σ(h)·tanh(h).
        let shape = NetShape::new(2, 2, 2, 3);
        let mut net = init_network(shape, 4);
        net.params.wx.iter_mut().for_each(|w| *w = 0.0);
        let state = RecurrentState {
            h: vec![0.0, 0.0],
            c: vec![0.7, -1.3],
        };
        let (_, out, _) = net.forward_step(&state, &[0.3, 0.1]).unwrap();
        let f = sigmoid(1.0);
        for j in 0..2 {
            assert!((out.c[j] - f * state.c[j]).abs() < 1e-15);
        }
    }
}
