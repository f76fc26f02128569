use super::model::Param;
use super::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.value.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data()[i] / bc1;
                let v_hat = v.data()[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut params = vec![Param { name: "x".into(), value: Tensor::from_vec(1, 2, vec![3.0, -2.0]).unwrap() }];
        let mut adam = Adam::new(&params);
        for _ in 0..2000 {
            let g = params[0].value.map(|x| 2.0 * (x - 1.0));
            adam.step(&mut params, &[g], 0.05);
        }
        for &x in params[0].value.data() {
            assert!((x - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Param { name: "x".into(), value: Tensor::scalar(0.0) }];
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &[Tensor::scalar(123.0)], 1e-3);
        assert!((params[0].value.item() + 1e-3).abs() < 1e-9);
    }
}
