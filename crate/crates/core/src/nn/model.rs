//! The distribution compressor network: analysis transform over a histogram
//! bank, a factorized entropy model over its latent, and a synthesis
//! transform back to per-channel pmfs.

use rand::Rng;

use super::graph::{Graph, Var};
use super::ops::{softmax_rows, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::support::EPS_P;

/// Inputs to the analysis transform are `-log2(p + EPS_P)` clipped to this.
pub const INPUT_NLL_CLIP: f64 = 10.0;
/// Integer support of the compressor latent.
pub const Q_MIN: i32 = -32;
pub const Q_MAX: i32 = 31;
/// Total downscaling of the bin axis by the analysis transform.
pub const Q_DOWNSCALE: usize = 4;

/// Hyperparameters of the two five-layer transforms.
///
/// The analysis channel plan is `channels -> n_q -> n_q -> n_q -> n_q -> m_q`
/// with stride 2 at layers 2 and 4; synthesis mirrors it with transposed
/// convolutions for the upsampling layers. ReLU and a channel shuffle follow
/// layers 1-4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformConfig {
    /// Latent channels `C` (one pmf each).
    pub channels: usize,
    pub n_q: usize,
    pub m_q: usize,
    pub kernel: usize,
    pub groups: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Analysis,
    Synthesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub transposed: bool,
    pub geom: ConvGeom,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> (usize, usize) {
        if self.transposed {
            self.geom.conv_t_weight_shape()
        } else {
            self.geom.conv_weight_shape()
        }
    }
}

impl TransformConfig {
    /// `(n_q, m_q) = (32, 16)`, `K = 15`, `G = 8`.
    pub fn low_res(channels: usize, bins: usize) -> Self {
        Self { channels, n_q: 32, m_q: 16, kernel: 15, groups: 8, bins }
    }

    /// `(n_q, m_q) = (64, 32)`, `K = 15`, `G = 8`.
    pub fn high_res(channels: usize, bins: usize) -> Self {
        Self { channels, n_q: 64, m_q: 32, kernel: 15, groups: 8, bins }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("channels", self.channels), ("n_q", self.n_q), ("m_q", self.m_q)] {
            if c == 0 || self.groups == 0 || c % self.groups != 0 {
                return Err(Error::BadShape(format!("{name} = {c} not divisible by {} groups", self.groups)));
            }
        }
        if self.bins == 0 || self.bins % Q_DOWNSCALE != 0 {
            return Err(Error::BadShape(format!("bins = {} not divisible by {Q_DOWNSCALE}", self.bins)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::BadShape(format!("kernel size {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Length of the compressor latent along the bin axis.
    pub fn latent_len(&self) -> usize {
        self.bins / Q_DOWNSCALE
    }

    pub fn q_support(&self) -> usize {
        (Q_MAX - Q_MIN + 1) as usize
    }

    fn geom(&self, in_ch: usize, out_ch: usize, stride: usize) -> ConvGeom {
        ConvGeom { in_ch, out_ch, kernel: self.kernel, groups: self.groups, stride }
    }

    pub fn layers(&self, side: Side) -> Vec<LayerSpec> {
        let (c, n, m) = (self.channels, self.n_q, self.m_q);
        let plain = |geom| LayerSpec { transposed: false, geom };
        let up = |geom| LayerSpec { transposed: true, geom };
        match side {
            Side::Analysis => vec![
                plain(self.geom(c, n, 1)),
                plain(self.geom(n, n, 2)),
                plain(self.geom(n, n, 1)),
                plain(self.geom(n, n, 2)),
                plain(self.geom(n, m, 1)),
            ],
            Side::Synthesis => vec![
                plain(self.geom(m, n, 1)),
                up(self.geom(n, n, 2)),
                plain(self.geom(n, n, 1)),
                up(self.geom(n, n, 2)),
                plain(self.geom(n, c, 1)),
            ],
        }
    }

    /// Total downscaling of the analysis transform.
    pub fn downscale(&self) -> usize {
        self.layers(Side::Analysis).iter().map(|l| l.geom.stride).product()
    }
}

/// Trainable weights and biases of one transform, closed form.
pub fn count_params(config: &TransformConfig, side: Side) -> usize {
    let (c, n, m) = (config.channels, config.n_q, config.m_q);
    let kg = |a: usize, b: usize| a * b / config.groups * config.kernel;
    let interior = 3 * (kg(n, n) + n);
    match side {
        Side::Analysis => kg(c, n) + n + interior + kg(n, m) + m,
        Side::Synthesis => kg(m, n) + n + interior + kg(n, c) + c,
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Weights of the distribution compressor.
#[derive(Debug, Clone, PartialEq)]
pub struct DistNet {
    config: TransformConfig,
    params: Vec<Param>,
}

/// Graph handles produced by [`DistNet::forward`].
#[derive(Debug, Clone, Copy)]
pub struct NetOutputs {
    /// Compressor latent before noise or rounding.
    pub q: Var,
    /// Natural log of the floored reconstruction `p_hat`, `channels x bins`.
    pub log_phat: Var,
    /// `pixels * sum_j CE(p_j, p_hat_j)` in bits.
    pub rate_y: Var,
    /// Code length of the perturbed or rounded latent in bits.
    pub rate_q: Var,
    /// `rate_y + lambda_q * rate_q`.
    pub loss: Var,
}

/// How the compressor latent is made discrete-like in a forward pass.
#[derive(Debug, Clone)]
pub enum QMode<'a> {
    /// Add the given noise tensor (uniform on (-0.5, 0.5) in training).
    Noise(&'a Tensor),
    /// Round half away from zero and clamp to the q support.
    Round,
}

impl DistNet {
    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// is drawn from `U(-a, a)` with `a = sqrt(G / (C_in * K))`.
    pub fn init(config: TransformConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for (prefix, side) in [("ha", Side::Analysis), ("hs", Side::Synthesis)] {
            for (i, layer) in config.layers(side).iter().enumerate() {
                let g = layer.geom;
                let bound = (g.groups as f64 / (g.in_ch * g.kernel) as f64).sqrt();
                let (wr, wc) = layer.weight_shape();
                let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
                let w = Tensor::from_vec(wr, wc, draw(wr * wc))?;
                let b = Tensor::from_vec(g.out_ch, 1, draw(g.out_ch))?;
                params.push(Param { name: format!("{prefix}.{i}.weight"), value: w });
                params.push(Param { name: format!("{prefix}.{i}.bias"), value: b });
            }
        }
        // Start the q pmfs as a discrete Laplacian centered on zero.
        let s = config.q_support();
        let logits: Vec<f64> = (0..config.m_q)
            .flat_map(|_| (0..s).map(|k| -0.5 * (Q_MIN + k as i32).abs() as f64))
            .collect();
        params.push(Param { name: "q.logits".into(), value: Tensor::from_vec(config.m_q, s, logits)? });
        Ok(Self { config, params })
    }

    /// Rebuilds a network from named tensors; names and shapes must match
    /// the layout of [`DistNet::init`] for `config`.
    pub fn from_params(config: TransformConfig, params: Vec<Param>) -> Result<Self> {
        let template = Self::layout(&config)?;
        if template.len() != params.len() {
            return Err(Error::BadShape(format!("expected {} tensors, got {}", template.len(), params.len())));
        }
        for ((name, shape), p) in template.iter().zip(&params) {
            if *name != p.name || *shape != p.value.shape() {
                return Err(Error::BadShape(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// `(name, shape)` of every parameter tensor for `config`, in order.
    pub fn layout(config: &TransformConfig) -> Result<Vec<(String, (usize, usize))>> {
        config.validate()?;
        let mut out = Vec::new();
        for (prefix, side) in [("ha", Side::Analysis), ("hs", Side::Synthesis)] {
            for (i, layer) in config.layers(side).iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), layer.weight_shape()));
                out.push((format!("{prefix}.{i}.bias"), (layer.geom.out_ch, 1)));
            }
        }
        out.push(("q.logits".into(), (config.m_q, config.q_support())));
        Ok(out)
    }

    pub fn config(&self) -> &TransformConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Rounds every parameter to the nearest f32, the precision of model files.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Creates one leaf per parameter, in parameter order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.value.clone())).collect()
    }

    fn run_transform(&self, g: &mut Graph, vars: &[Var], side: Side, mut x: Var) -> Result<Var> {
        let offset = match side {
            Side::Analysis => 0,
            Side::Synthesis => 10,
        };
        let layers = self.config.layers(side);
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            let (w, b) = (vars[offset + 2 * i], vars[offset + 2 * i + 1]);
            x = if layer.transposed {
                g.conv1d_transposed(x, w, b, layer.geom)?
            } else {
                g.conv1d(x, w, b, layer.geom)?
            };
            if i < last {
                x = g.relu(x);
                x = g.channel_shuffle(x, self.config.groups)?;
            }
        }
        Ok(x)
    }

    fn check_input(&self, p: &Tensor) -> Result<()> {
        if p.shape() != (self.config.channels, self.config.bins) {
            return Err(Error::SpecMismatch(format!(
                "bank is {}x{}, model expects {}x{}",
                p.rows(),
                p.cols(),
                self.config.channels,
                self.config.bins
            )));
        }
        Ok(())
    }

    /// Analysis transform of a `channels x bins` probability node.
    pub fn analysis(&self, g: &mut Graph, vars: &[Var], p: Var) -> Result<Var> {
        self.check_input(g.value(p))?;
        let x = g.neg_log2_clip(p, EPS_P, INPUT_NLL_CLIP);
        self.run_transform(g, vars, Side::Analysis, x)
    }

    /// Synthesis transform to floored log-probabilities, `channels x bins`.
    pub fn synthesis(&self, g: &mut Graph, vars: &[Var], q: Var) -> Result<Var> {
        let logits = self.run_transform(g, vars, Side::Synthesis, q)?;
        Ok(g.log_pmf(logits, EPS_P))
    }

    /// Full pass from a probability node to the rate terms.
    ///
    /// `pixels` is the number of latent elements per channel, so `rate_y`
    /// is the expected latent code length in bits.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], p: Var, mode: QMode<'_>, pixels: f64, lambda_q: f64) -> Result<NetOutputs> {
        let q = self.analysis(g, vars, p)?;
        let q_used = match mode {
            QMode::Noise(noise) => g.add_const(q, noise)?,
            QMode::Round => {
                let rounded = round_q(g.value(q));
                let mut delta = rounded;
                delta.add_scaled(g.value(q), -1.0);
                g.add_const(q, &delta)?
            }
        };
        let log_phat = self.synthesis(g, vars, q_used)?;
        let rate_y = g.rate_y(log_phat, p, pixels)?;
        let q_probs = g.softmax(*vars.last().expect("q logits"));
        let rate_q = g.q_rate(q_used, q_probs, Q_MIN)?;
        let loss = g.lin(rate_y, rate_q, 1.0, lambda_q)?;
        Ok(NetOutputs { q, log_phat, rate_y, rate_q, loss })
    }

    /// Inference-mode analysis: real-valued compressor latent.
    pub fn analyze(&self, p: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let pv = g.leaf(p.clone());
        let q = self.analysis(&mut g, &vars, pv)?;
        Ok(g.value(q).clone())
    }

    /// Inference-mode synthesis: pmfs (floored at `EPS_P`) from an integer
    /// latent, `channels x bins`.
    pub fn synthesize(&self, q_hat: &Tensor) -> Result<Tensor> {
        let (m, l) = (self.config.m_q, self.config.latent_len());
        q_hat.expect_shape(m, l, "compressor latent")?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let qv = g.leaf(q_hat.clone());
        let log_phat = self.synthesis(&mut g, &vars, qv)?;
        Ok(g.value(log_phat).map(f64::exp))
    }

    /// The factorized pmfs of the compressor latent, `m_q x q_support`.
    pub fn q_pmfs(&self) -> Tensor {
        softmax_rows(&self.params.last().expect("q logits").value)
    }
}

/// Round half away from zero and clamp into `[Q_MIN, Q_MAX]`.
pub fn round_q(q: &Tensor) -> Tensor {
    q.map(|v| v.round().clamp(Q_MIN as f64, Q_MAX as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_scale_param_count() {
        let cfg = TransformConfig { channels: 192, n_q: 32, m_q: 16, kernel: 15, groups: 8, bins: 256 };
        let ha = count_params(&cfg, Side::Analysis);
        let hs = count_params(&cfg, Side::Synthesis);
        assert_eq!(ha, 18_384);
        assert_eq!(hs, 18_560);
        for n in [ha, hs] {
            let ratio = n as f64 / 29_000.0;
            assert!((0.5..=2.0).contains(&ratio));
        }
    }

    #[test]
    fn single_tap_layer_counts_two() {
        let cfg = TransformConfig { channels: 1, n_q: 1, m_q: 1, kernel: 1, groups: 1, bins: 4 };
        // Five 1->1 layers with a single tap and a bias each.
        assert_eq!(count_params(&cfg, Side::Analysis), 5 * 2);
        let layer = cfg.layers(Side::Analysis)[0];
        let (r, c) = layer.weight_shape();
        assert_eq!(r * c + layer.geom.out_ch, 2);
    }

    #[test]
    fn doubling_width_quadruples_interior() {
        let a = TransformConfig::low_res(64, 128);
        let b = TransformConfig { n_q: 2 * a.n_q, ..a };
        let interior = |c: &TransformConfig| 3 * (c.n_q * c.n_q / c.groups * c.kernel);
        assert_eq!(interior(&b), 4 * interior(&a));
    }

    #[test]
    fn enumerated_params_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [TransformConfig::low_res(32, 128), TransformConfig::high_res(64, 256)] {
            let net = DistNet::init(cfg, &mut rng).unwrap();
            let count = |prefix: &str| -> usize {
                net.params().iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.value.len()).sum()
            };
            assert_eq!(count("ha."), count_params(&cfg, Side::Analysis));
            assert_eq!(count("hs."), count_params(&cfg, Side::Synthesis));
        }
    }

    #[test]
    fn shapes_and_downscale() {
        let cfg = TransformConfig::low_res(32, 128);
        assert_eq!(cfg.downscale(), 4);
        let net = DistNet::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = Tensor::from_vec(32, 128, vec![1.0 / 128.0; 32 * 128]).unwrap();
        let q = net.analyze(&p).unwrap();
        assert_eq!(q.shape(), (16, 32));
        let phat = net.synthesize(&round_q(&q)).unwrap();
        assert_eq!(phat.shape(), (32, 128));
        for r in 0..32 {
            let total: f64 = phat.row(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(phat.row(r).iter().all(|&v| v >= EPS_P * 0.999));
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = TransformConfig { channels: 12, ..TransformConfig::low_res(32, 128) };
        assert!(bad.validate().is_err());
        let bad = TransformConfig::low_res(32, 130);
        assert!(bad.validate().is_err());
        let net = DistNet::init(TransformConfig::low_res(16, 64), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(matches!(net.analyze(&Tensor::zeros(8, 64)), Err(Error::SpecMismatch(_))));
    }
}
