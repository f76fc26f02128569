//! Reverse-mode automatic differentiation over 2D tensors.
//!
//! A [`Graph`] records every operation as it is applied. Nodes are appended
//! in evaluation order, so walking them backwards is a reverse topological
//! order and every node is visited exactly once by [`Graph::backward`].
//! Gradients of shared inputs accumulate additively.

use std::f64::consts::LN_2;

use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::histogram::{hard_masses, soft_histogram_grad, soft_masses};
use crate::support::HistogramSpec;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    Shuffle { x: Var, groups: usize },
    /// `x + c` for a constant `c`; the gradient passes through unchanged.
    AddConst(Var),
    NegLog2Clip { x: Var, eps: f64, max: f64 },
    LogPmf { x: Var, eps: f64 },
    Softmax(Var),
    RateY { log_p: Var, p: Var, scale: f64 },
    QRate { q: Var, probs: Var, q_min: i32 },
    SoftHist { y: Var, spec: HistogramSpec },
    SteHist { y: Var, spec: HistogramSpec },
    Lin { a: Var, b: Var, wa: f64, wb: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the output does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of its shape.
    pub fn get_or_zeros(&self, v: Var, graph: &Graph) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = graph.value(v).shape();
            Tensor::zeros(r, c)
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Input or parameter node. Constants are leaves whose gradient is ignored.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let out = ops::conv1d_forward(self.value(x), self.value(w), self.value(b), &geom)?;
        Ok(self.push(out, Op::Conv { x, w, b, geom }))
    }

    pub fn conv1d_transposed(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let out = ops::conv1d_transposed_forward(self.value(x), self.value(w), self.value(b), &geom)?;
        Ok(self.push(out, Op::ConvT { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let out = ops::channel_shuffle(self.value(x), groups)?;
        Ok(self.push(out, Op::Shuffle { x, groups }))
    }

    /// Adds a constant tensor, e.g. training noise.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        c.expect_shape(xv.rows(), xv.cols(), "add_const")?;
        let mut out = xv.clone();
        out.add_assign(c);
        Ok(self.push(out, Op::AddConst(x)))
    }

    /// `clamp(-log2(x + eps), 0, max)` elementwise.
    pub fn neg_log2_clip(&mut self, x: Var, eps: f64, max: f64) -> Var {
        let out = self.value(x).map(|v| (-(v + eps).log2()).clamp(0.0, max));
        self.push(out, Op::NegLog2Clip { x, eps, max })
    }

    /// Row-wise softmax, floored at `eps`, renormalized, returned as natural
    /// log-probabilities.
    pub fn log_pmf(&mut self, logits: Var, eps: f64) -> Var {
        let s = ops::softmax_rows(self.value(logits));
        let mut out = s;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = v.max(eps);
                total += *v;
            }
            let log_total = total.ln();
            for v in row.iter_mut() {
                *v = v.ln() - log_total;
            }
        }
        self.push(out, Op::LogPmf { x: logits, eps })
    }

    pub fn softmax(&mut self, logits: Var) -> Var {
        let out = ops::softmax_rows(self.value(logits));
        self.push(out, Op::Softmax(logits))
    }

    /// `scale * sum -p * log p_hat` in bits, with `log_p` in nats.
    pub fn rate_y(&mut self, log_p: Var, p: Var, scale: f64) -> Result<Var> {
        let (lv, pv) = (self.value(log_p), self.value(p));
        if lv.shape() != pv.shape() {
            return Err(Error::SpecMismatch(format!(
                "rate over {:?} log-probs and {:?} probs",
                lv.shape(),
                pv.shape()
            )));
        }
        let ce: f64 = lv.data().iter().zip(pv.data()).map(|(l, p)| -p * l).sum();
        Ok(self.push(Tensor::scalar(scale * ce / LN_2), Op::RateY { log_p, p, scale }))
    }

    /// Code length in bits of `q` under per-row pmfs `probs` over the integer
    /// support `q_min..q_min + probs.cols()`, evaluated between integers by
    /// linear interpolation. Values beyond the support are clamped to it.
    pub fn q_rate(&mut self, q: Var, probs: Var, q_min: i32) -> Result<Var> {
        let (qv, pv) = (self.value(q), self.value(probs));
        if qv.rows() != pv.rows() || pv.cols() < 2 {
            return Err(Error::BadShape(format!(
                "q rate over {:?} values and {:?} pmfs",
                qv.shape(),
                pv.shape()
            )));
        }
        let mut bits = 0.0;
        for r in 0..qv.rows() {
            let prow = pv.row(r);
            for &v in qv.row(r) {
                let (lo, a, _) = interp_position(v, q_min, prow.len());
                let l = (1.0 - a) * prow[lo] + a * prow[lo + 1];
                bits -= l.log2();
            }
        }
        Ok(self.push(Tensor::scalar(bits), Op::QRate { q, probs, q_min }))
    }

    /// Soft (triangular kernel) histogram of every row of `y`.
    pub fn soft_histogram(&mut self, y: Var, spec: HistogramSpec) -> Result<Var> {
        let out = self.hist_rows(y, spec, soft_masses)?;
        Ok(self.push(out, Op::SoftHist { y, spec }))
    }

    /// Hard histogram forward, soft-histogram gradient backward.
    pub fn ste_histogram(&mut self, y: Var, spec: HistogramSpec) -> Result<Var> {
        let out = self.hist_rows(y, spec, hard_masses)?;
        Ok(self.push(out, Op::SteHist { y, spec }))
    }

    fn hist_rows(&self, y: Var, spec: HistogramSpec, f: fn(&[f64], HistogramSpec) -> Vec<f64>) -> Result<Tensor> {
        let yv = self.value(y);
        if yv.cols() == 0 {
            return Err(Error::EmptyChannel);
        }
        let b = spec.num_bins();
        let mut out = Tensor::zeros(yv.rows(), b);
        for r in 0..yv.rows() {
            out.row_mut(r).copy_from_slice(&f(yv.row(r), spec));
        }
        Ok(out)
    }

    /// `wa * a + wb * b` for same-shaped nodes.
    pub fn lin(&mut self, a: Var, b: Var, wa: f64, wb: f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::BadShape(format!("lin over {:?} and {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.map(|v| wa * v);
        out.add_scaled(bv, wb);
        Ok(self.push(out, Op::Lin { a, b, wa, wb }))
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let (r, c) = self.value(out).shape();
        grads[out.0] = Some(Tensor::from_vec(r, c, vec![1.0; r * c]).expect("shape"));

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b, geom } => {
                    let (gx, gw, gb) = ops::conv1d_backward(self.value(*x), self.value(*w), geom, &g);
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::ConvT { x, w, b, geom } => {
                    let (gx, gw, gb) = ops::conv1d_transposed_backward(self.value(*x), self.value(*w), geom, &g);
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    for (gv, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Shuffle { x, groups } => {
                    let gx = ops::channel_unshuffle(&g, *groups).expect("validated in forward");
                    accumulate(&mut grads[x.0], gx);
                }
                Op::AddConst(x) => accumulate(&mut grads[x.0], g.clone()),
                Op::NegLog2Clip { x, eps, max } => {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    for ((gv, &v), &o) in gx.data_mut().iter_mut().zip(xv.data()).zip(node.value.data()) {
                        *gv = if o > 0.0 && o < *max { -*gv / ((v + eps) * LN_2) } else { 0.0 };
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LogPmf { x, eps } => {
                    let s = ops::softmax_rows(self.value(*x));
                    let mut gx = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let srow = s.row(r);
                        let grow = g.row(r);
                        let m: Vec<f64> = srow.iter().map(|v| v.max(*eps)).collect();
                        let z: f64 = m.iter().sum();
                        let gsum: f64 = grow.iter().sum();
                        // d out_i / d m_k = delta_ik / m_i - 1/Z ; m_k passes s_k above the floor.
                        let gs: Vec<f64> = (0..srow.len())
                            .map(|k| if srow[k] > *eps { grow[k] / m[k] - gsum / z } else { 0.0 })
                            .collect();
                        let dot: f64 = gs.iter().zip(srow).map(|(a, b)| a * b).sum();
                        for (k, gv) in gx.row_mut(r).iter_mut().enumerate() {
                            *gv = srow[k] * (gs[k] - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Softmax(x) => {
                    let s = &node.value;
                    let mut gx = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let srow = s.row(r);
                        let grow = g.row(r);
                        let dot: f64 = grow.iter().zip(srow).map(|(a, b)| a * b).sum();
                        for (k, gv) in gx.row_mut(r).iter_mut().enumerate() {
                            *gv = srow[k] * (grow[k] - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::RateY { log_p, p, scale } => {
                    let k = -g.item() * scale / LN_2;
                    let gl = self.value(*p).map(|v| k * v);
                    let gp = self.value(*log_p).map(|v| k * v);
                    accumulate(&mut grads[log_p.0], gl);
                    accumulate(&mut grads[p.0], gp);
                }
                Op::QRate { q, probs, q_min } => {
                    let (qv, pv) = (self.value(*q), self.value(*probs));
                    let up = g.item();
                    let mut gq = Tensor::zeros(qv.rows(), qv.cols());
                    let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                    for r in 0..qv.rows() {
                        let prow = pv.row(r);
                        for (t, &v) in qv.row(r).iter().enumerate() {
                            let (lo, a, inside) = interp_position(v, *q_min, prow.len());
                            let l = (1.0 - a) * prow[lo] + a * prow[lo + 1];
                            let k = -up / (l * LN_2);
                            if inside {
                                gq.row_mut(r)[t] = k * (prow[lo + 1] - prow[lo]);
                            }
                            let gprow = gp.row_mut(r);
                            gprow[lo] += k * (1.0 - a);
                            gprow[lo + 1] += k * a;
                        }
                    }
                    accumulate(&mut grads[q.0], gq);
                    accumulate(&mut grads[probs.0], gp);
                }
                Op::SoftHist { y, spec } | Op::SteHist { y, spec } => {
                    let yv = self.value(*y);
                    let mut gy = Tensor::zeros(yv.rows(), yv.cols());
                    for r in 0..yv.rows() {
                        let row = soft_histogram_grad(yv.row(r), *spec, g.row(r)).expect("validated in forward");
                        gy.row_mut(r).copy_from_slice(&row);
                    }
                    accumulate(&mut grads[y.0], gy);
                }
                Op::Lin { a, b, wa, wb } => {
                    accumulate(&mut grads[a.0], g.map(|v| v * wa));
                    accumulate(&mut grads[b.0], g.map(|v| v * wb));
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// `(left offset, fraction, strictly inside support)` of `v` on the integer
/// grid `q_min..q_min + n`.
fn interp_position(v: f64, q_min: i32, n: usize) -> (usize, f64, bool) {
    let last = (n - 1) as f64;
    let t = v - q_min as f64;
    let inside = t > 0.0 && t < last;
    let t = t.clamp(0.0, last);
    let lo = (t.floor() as usize).min(n - 2);
    (lo, t - lo as f64, inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Checks the gradient of `f` with respect to each input tensor against
    /// central differences. `f` builds a scalar from leaves holding `inputs`.
    fn check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
        let eval = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
            let out = f(&mut g, &vars);
            g.value(out).item()
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out);
        let h = 1e-5;
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(*v, &g);
            for j in 0..inputs[i].len() {
                let mut up = inputs.to_vec();
                let mut dn = inputs.to_vec();
                up[i].data_mut()[j] += h;
                dn[i].data_mut()[j] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let a = analytic.data()[j];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel <= tol, "input {i}[{j}]: analytic {a} vs fd {fd} (rel {rel})");
            }
        }
    }

    /// Scalar functional `sum c * x` so every output element matters.
    fn project(g: &mut Graph, x: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = g.value(x).shape();
        let coef = rand_tensor(r, c, -1.0, 1.0, &mut rng);
        let cv = g.leaf(coef);
        // rate_y(log_p = x, p = coef, scale = -ln2) = sum coef * x
        g.rate_y(x, cv, -LN_2).unwrap()
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for &(cin, cout, groups, stride) in &[(4, 4, 2, 1), (4, 8, 4, 2), (6, 3, 3, 1)] {
            let geom = ConvGeom { in_ch: cin, out_ch: cout, kernel: 5, groups, stride };
            let (wr, wc) = geom.conv_weight_shape();
            let inputs = [
                rand_tensor(cin, 8, -1.0, 1.0, &mut rng),
                rand_tensor(wr, wc, -1.0, 1.0, &mut rng),
                rand_tensor(cout, 1, -1.0, 1.0, &mut rng),
            ];
            check(&inputs, |g, v| {
                let y = g.conv1d(v[0], v[1], v[2], geom).unwrap();
                project(g, y, 1)
            }, 1e-5);
        }
    }

    #[test]
    fn conv_transposed_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, groups, stride) in &[(4, 4, 2, 2), (8, 4, 4, 2), (3, 6, 3, 1)] {
            let geom = ConvGeom { in_ch: cin, out_ch: cout, kernel: 5, groups, stride };
            let (wr, wc) = geom.conv_t_weight_shape();
            let inputs = [
                rand_tensor(cin, 4, -1.0, 1.0, &mut rng),
                rand_tensor(wr, wc, -1.0, 1.0, &mut rng),
                rand_tensor(cout, 1, -1.0, 1.0, &mut rng),
            ];
            check(&inputs, |g, v| {
                let y = g.conv1d_transposed(v[0], v[1], v[2], geom).unwrap();
                project(g, y, 2)
            }, 1e-5);
        }
    }

    #[test]
    fn relu_shuffle_noise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Keep values away from the ReLU kink.
        let mut x = rand_tensor(6, 5, -1.0, 1.0, &mut rng);
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let noise = rand_tensor(6, 5, -0.5, 0.5, &mut rng);
        check(&[x], |g, v| {
            let a = g.relu(v[0]);
            let b = g.channel_shuffle(a, 3).unwrap();
            let c = g.add_const(b, &noise).unwrap();
            project(g, c, 3)
        }, 1e-5);
    }

    #[test]
    fn relu_and_softmax_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.leaf(Tensor::zeros(2, 4));
        let s = g.softmax(z);
        assert!(g.value(s).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn log_pmf_and_softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(3, 7, -2.0, 2.0, &mut rng);
        check(&[x.clone()], |g, v| {
            let l = g.log_pmf(v[0], 1e-4);
            project(g, l, 4)
        }, 1e-5);
        check(&[x], |g, v| {
            let s = g.softmax(v[0]);
            project(g, s, 5)
        }, 1e-5);
    }

    #[test]
    fn log_pmf_floor_gradient() {
        // One entry far below the floor: its gradient is cut, the rest stay exact.
        let x = Tensor::from_vec(1, 4, vec![-30.0, 0.3, -0.2, 1.0]).unwrap();
        check(&[x], |g, v| {
            let l = g.log_pmf(v[0], 1e-3);
            project(g, l, 6)
        }, 1e-5);
    }

    #[test]
    fn neg_log_clip_gradient() {
        let x = Tensor::from_vec(1, 5, vec![0.3, 0.05, 0.7, 1e-6, 0.01]).unwrap();
        check(&[x], |g, v| {
            let l = g.neg_log2_clip(v[0], 1.0 / 65536.0, 10.0);
            project(g, l, 7)
        }, 1e-5);
    }

    #[test]
    fn rate_and_q_rate_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let logits = rand_tensor(2, 5, -1.0, 1.0, &mut rng);
        let p = rand_tensor(2, 5, 0.0, 1.0, &mut rng);
        check(&[logits.clone(), p], |g, v| {
            let l = g.log_pmf(v[0], 1e-9);
            g.rate_y(l, v[1], 3.0).unwrap()
        }, 1e-5);
        // q values off the integer grid, some beyond the support edges.
        let q = Tensor::from_vec(2, 4, vec![-2.3, 0.4, 1.7, 5.0, -0.6, 0.01, 1.49, -3.5]).unwrap();
        let ql = rand_tensor(2, 5, -1.0, 1.0, &mut rng);
        check(&[q, ql], |g, v| {
            let probs = g.softmax(v[1]);
            g.q_rate(v[0], probs, -2).unwrap()
        }, 1e-5);
    }

    #[test]
    fn soft_and_ste_histogram_gradients() {
        let spec = HistogramSpec::new(-3, 4).unwrap();
        let y = Tensor::from_vec(2, 5, vec![-2.6, 0.3, 1.45, 3.2, -0.71, 2.2, 2.9, -1.1, 0.62, 3.97]).unwrap();
        check(&[y.clone()], |g, v| {
            let h = g.soft_histogram(v[0], spec).unwrap();
            project(g, h, 8)
        }, 1e-5);
        // STE backward equals soft backward.
        let mut g = Graph::new();
        let yv = g.leaf(y.clone());
        let h = g.ste_histogram(yv, spec).unwrap();
        let hard: Vec<f64> = (0..2).flat_map(|r| hard_masses(y.row(r), spec)).collect();
        assert_eq!(g.value(h).data(), &hard[..]);
        let out = project(&mut g, h, 8);
        let ste = g.backward(out).get(yv).unwrap().clone();
        let mut g2 = Graph::new();
        let yv2 = g2.leaf(y);
        let h2 = g2.soft_histogram(yv2, spec).unwrap();
        let out2 = project(&mut g2, h2, 8);
        assert_eq!(&ste, g2.backward(out2).get(yv2).unwrap());
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.lin(x, x, 2.0, 5.0).unwrap();
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }
}
