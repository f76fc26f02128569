//! Forward and backward kernels for the layer set. All loops run in a fixed
//! order so results are reproducible bit for bit.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape parameters of a grouped 1D (transposed) convolution with symmetric
/// zero padding `(kernel - 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub groups: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || self.in_ch % g != 0 || self.out_ch % g != 0 {
            return Err(Error::BadShape(format!(
                "channels {}->{} not divisible by {g} groups",
                self.in_ch, self.out_ch
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::BadShape(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.stride == 0 {
            return Err(Error::BadShape("stride must be positive".into()));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    /// Weight shape of a forward convolution: `out_ch x (in_ch/G * K)`.
    pub fn conv_weight_shape(&self) -> (usize, usize) {
        (self.out_ch, self.in_per_group() * self.kernel)
    }

    /// Weight shape of a transposed convolution: `in_ch x (out_ch/G * K)`.
    pub fn conv_t_weight_shape(&self) -> (usize, usize) {
        (self.in_ch, self.out_per_group() * self.kernel)
    }
}

fn check_conv_inputs(x: &Tensor, w: &Tensor, b: &Tensor, geom: &ConvGeom, w_shape: (usize, usize)) -> Result<()> {
    geom.validate()?;
    if x.rows() != geom.in_ch {
        return Err(Error::BadShape(format!("input has {} channels, layer expects {}", x.rows(), geom.in_ch)));
    }
    w.expect_shape(w_shape.0, w_shape.1, "conv weight")?;
    b.expect_shape(geom.out_ch, 1, "conv bias")?;
    Ok(())
}

/// Grouped strided cross-correlation. The input length must be divisible by
/// the stride; the output has `len / stride` positions.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    check_conv_inputs(x, w, b, geom, geom.conv_weight_shape())?;
    let len = x.cols();
    if len % geom.stride != 0 {
        return Err(Error::BadShape(format!("length {len} not divisible by stride {}", geom.stride)));
    }
    let out_len = len / geom.stride;
    let (k, pad, s) = (geom.kernel, geom.pad() as isize, geom.stride);
    let (cin_g, cout_g) = (geom.in_per_group(), geom.out_per_group());
    let mut out = Tensor::zeros(geom.out_ch, out_len);
    for o in 0..geom.out_ch {
        let g = o / cout_g;
        let bias = b.get(o, 0);
        let wrow = w.row(o);
        let orow = out.row_mut(o);
        for (t, ov) in orow.iter_mut().enumerate() {
            let base = (t * s) as isize - pad;
            let mut acc = bias;
            for ci in 0..cin_g {
                let xrow = x.row(g * cin_g + ci);
                let wk = &wrow[ci * k..(ci + 1) * k];
                for (kk, &wv) in wk.iter().enumerate() {
                    let pos = base + kk as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += wv * xrow[pos as usize];
                    }
                }
            }
            *ov = acc;
        }
    }
    Ok(out)
}

/// Gradients `(dx, dw, db)` of [`conv1d_forward`].
pub fn conv1d_backward(x: &Tensor, w: &Tensor, geom: &ConvGeom, gy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let len = x.cols();
    let (k, pad, s) = (geom.kernel, geom.pad() as isize, geom.stride);
    let (cin_g, cout_g) = (geom.in_per_group(), geom.out_per_group());
    let mut gx = Tensor::zeros(x.rows(), len);
    let mut gw = Tensor::zeros(w.rows(), w.cols());
    let mut gb = Tensor::zeros(geom.out_ch, 1);
    for o in 0..geom.out_ch {
        let g = o / cout_g;
        let gyrow = gy.row(o);
        gb.data_mut()[o] = gyrow.iter().sum();
        for ci in 0..cin_g {
            let xi = g * cin_g + ci;
            for kk in 0..k {
                let wv = w.get(o, ci * k + kk);
                let mut gwacc = 0.0;
                for (t, &gv) in gyrow.iter().enumerate() {
                    let pos = (t * s) as isize - pad + kk as isize;
                    if pos >= 0 && (pos as usize) < len {
                        let p = pos as usize;
                        gwacc += gv * x.get(xi, p);
                        gx.row_mut(xi)[p] += gv * wv;
                    }
                }
                gw.row_mut(o)[ci * k + kk] = gwacc;
            }
        }
    }
    (gx, gw, gb)
}

/// Grouped transposed convolution: the adjoint of [`conv1d_forward`] with
/// the roles of input and output channels swapped. Output length is
/// `len * stride`.
pub fn conv1d_transposed_forward(x: &Tensor, w: &Tensor, b: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    check_conv_inputs(x, w, b, geom, geom.conv_t_weight_shape())?;
    let len = x.cols();
    let out_len = len * geom.stride;
    let (k, pad, s) = (geom.kernel, geom.pad() as isize, geom.stride);
    let (cin_g, cout_g) = (geom.in_per_group(), geom.out_per_group());
    let mut out = Tensor::zeros(geom.out_ch, out_len);
    for o in 0..geom.out_ch {
        let bias = b.get(o, 0);
        out.row_mut(o).iter_mut().for_each(|v| *v = bias);
    }
    for i in 0..geom.in_ch {
        let g = i / cin_g;
        let xrow = x.row(i);
        for co in 0..cout_g {
            let o = g * cout_g + co;
            let wk = &w.row(i)[co * k..(co + 1) * k];
            let orow = out.row_mut(o);
            for (t, &xv) in xrow.iter().enumerate() {
                let base = (t * s) as isize - pad;
                for (kk, &wv) in wk.iter().enumerate() {
                    let pos = base + kk as isize;
                    if pos >= 0 && (pos as usize) < out_len {
                        orow[pos as usize] += wv * xv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients `(dx, dw, db)` of [`conv1d_transposed_forward`].
pub fn conv1d_transposed_backward(x: &Tensor, w: &Tensor, geom: &ConvGeom, gy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let len = x.cols();
    let out_len = gy.cols();
    let (k, pad, s) = (geom.kernel, geom.pad() as isize, geom.stride);
    let (cin_g, cout_g) = (geom.in_per_group(), geom.out_per_group());
    let mut gx = Tensor::zeros(x.rows(), len);
    let mut gw = Tensor::zeros(w.rows(), w.cols());
    let mut gb = Tensor::zeros(geom.out_ch, 1);
    for o in 0..geom.out_ch {
        gb.data_mut()[o] = gy.row(o).iter().sum();
    }
    for i in 0..geom.in_ch {
        let g = i / cin_g;
        for co in 0..cout_g {
            let o = g * cout_g + co;
            let gyrow = gy.row(o);
            for kk in 0..k {
                let wv = w.get(i, co * k + kk);
                let mut gwacc = 0.0;
                for t in 0..len {
                    let pos = (t * s) as isize - pad + kk as isize;
                    if pos >= 0 && (pos as usize) < out_len {
                        let gv = gyrow[pos as usize];
                        gwacc += gv * x.get(i, t);
                        gx.row_mut(i)[t] += gv * wv;
                    }
                }
                gw.row_mut(i)[co * k + kk] = gwacc;
            }
        }
    }
    (gx, gw, gb)
}

/// Destination row of channel `c` under a `groups`-way shuffle.
pub fn shuffle_dest(c: usize, channels: usize, groups: usize) -> usize {
    (c % groups) * (channels / groups) + c / groups
}

/// Moves row `c` to row [`shuffle_dest`]`(c)`.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let c = x.rows();
    if groups == 0 || c % groups != 0 {
        return Err(Error::BadShape(format!("{c} channels not divisible by {groups} groups")));
    }
    let mut out = Tensor::zeros(c, x.cols());
    for src in 0..c {
        out.row_mut(shuffle_dest(src, c, groups)).copy_from_slice(x.row(src));
    }
    Ok(out)
}

/// Inverse of [`channel_shuffle`]; also its backward pass.
pub fn channel_unshuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let c = x.rows();
    if groups == 0 || c % groups != 0 {
        return Err(Error::BadShape(format!("{c} channels not divisible by {groups} groups")));
    }
    let mut out = Tensor::zeros(c, x.cols());
    for src in 0..c {
        out.row_mut(src).copy_from_slice(x.row(shuffle_dest(src, c, groups)));
    }
    Ok(out)
}

/// Softmax of every row.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn identity_kernel() {
        let geom = ConvGeom { in_ch: 3, out_ch: 3, kernel: 5, groups: 3, stride: 1 };
        let mut w = Tensor::zeros(3, 5);
        for o in 0..3 {
            w.row_mut(o)[2] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(3, 10, &mut rng);
        let y = conv1d_forward(&x, &w, &Tensor::zeros(3, 1), &geom).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn averaging_kernel_on_ones() {
        let geom = ConvGeom { in_ch: 2, out_ch: 2, kernel: 5, groups: 1, stride: 1 };
        let w = Tensor::from_vec(2, 10, vec![0.1; 20]).unwrap();
        let x = Tensor::from_vec(2, 12, vec![1.0; 24]).unwrap();
        let y = conv1d_forward(&x, &w, &Tensor::zeros(2, 1), &geom).unwrap();
        for o in 0..2 {
            for t in 2..10 {
                assert!((y.get(o, t) - 1.0).abs() < 1e-12);
            }
            // Zero padding at the borders.
            assert!((y.get(o, 0) - 0.6).abs() < 1e-12);
            assert!((y.get(o, 11) - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_shapes() {
        let geom = ConvGeom { in_ch: 6, out_ch: 4, kernel: 3, groups: 4, stride: 1 };
        assert!(geom.validate().is_err());
        let geom = ConvGeom { in_ch: 4, out_ch: 4, kernel: 3, groups: 2, stride: 2 };
        let x = Tensor::zeros(4, 7);
        let (r, c) = geom.conv_weight_shape();
        let r = conv1d_forward(&x, &Tensor::zeros(r, c), &Tensor::zeros(4, 1), &geom);
        assert!(matches!(r, Err(Error::BadShape(_))));
        assert!(channel_shuffle(&Tensor::zeros(6, 1), 4).is_err());
    }

    #[test]
    fn transposed_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(cin, cout, g, s) in &[(8, 4, 2, 2), (4, 8, 4, 2), (6, 6, 3, 1), (2, 2, 1, 2)] {
            let geom = ConvGeom { in_ch: cin, out_ch: cout, kernel: 7, groups: g, stride: s };
            let (wr, wc) = geom.conv_weight_shape();
            let w = rand_tensor(wr, wc, &mut rng);
            let x = rand_tensor(cin, 16, &mut rng);
            let y = rand_tensor(cout, 16 / s, &mut rng);
            let cx = conv1d_forward(&x, &w, &Tensor::zeros(cout, 1), &geom).unwrap();
            let tgeom = ConvGeom { in_ch: cout, out_ch: cin, kernel: 7, groups: g, stride: s };
            assert_eq!(tgeom.conv_t_weight_shape(), (wr, wc));
            let ty = conv1d_transposed_forward(&y, &w, &Tensor::zeros(cin, 1), &tgeom).unwrap();
            assert_eq!(ty.shape(), x.shape());
            assert!((dot(&cx, &y) - dot(&x, &ty)).abs() < 1e-10);
        }
    }

    #[test]
    fn shuffle_definition() {
        let x = Tensor::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(channel_shuffle(&x, 2).unwrap().data(), &[0.0, 2.0, 1.0, 3.0]);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let g = rng.random_range(1..6);
            let c = g * rng.random_range(1..6);
            let x = rand_tensor(c, 3, &mut rng);
            let y = channel_shuffle(&x, g).unwrap();
            assert_eq!(channel_unshuffle(&y, g).unwrap(), x);
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = softmax_rows(&Tensor::zeros(2, 5));
        assert!(s.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }
}
