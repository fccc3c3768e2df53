use super::NnError;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamaxConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        AdamaxConfig {
            alpha: 0.0005,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

/// Adamax (the infinity-norm variant of Adam).
///
/// Each step moves parameters *against* the gradient:
///
/// ```text
/// t  <- t + 1
/// mu <- beta1 * mu + (1 - beta1) * g
/// u  <- max(beta2 * u, |g|)
/// w  <- w - alpha / (1 - beta1^t) * mu / u      (mu / u := 0 where u == 0)
/// ```
///
/// Training loops written as `w = w + alpha * Adamax(w, g)` read the optimizer
/// output as a descent direction; this type applies that sign directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adamax {
    config: AdamaxConfig,
    t: u64,
    moments: Vec<Vec<f64>>,
    norms: Vec<Vec<f64>>,
}

impl Adamax {
    /// Zero-initialized state for parameters with the given element counts.
    pub fn new(config: AdamaxConfig, param_lens: &[usize]) -> Self {
        Adamax {
            config,
            t: 0,
            moments: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            norms: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn config(&self) -> AdamaxConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[Vec<f64>] {
        &self.moments
    }

    pub fn norms(&self) -> &[Vec<f64>] {
        &self.norms
    }

    /// Applies one update. Non-finite gradients are rejected before any state
    /// or parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<(), NnError> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(NnError::GradientMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || g.len() != self.moments[i].len() {
                return Err(NnError::GradientMismatch(format!(
                    "tensor {i}: param {} grad {} state {}",
                    p.len(),
                    g.len(),
                    self.moments[i].len()
                )));
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { param: i, index });
            }
        }

        self.t += 1;
        let AdamaxConfig {
            alpha,
            beta1,
            beta2,
        } = self.config;
        let lr = alpha / (1.0 - beta1.powi(self.t as i32));
        for (i, p) in params.iter_mut().enumerate() {
            let mu = &mut self.moments[i];
            let u = &mut self.norms[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                mu[j] = beta1 * mu[j] + (1.0 - beta1) * g;
                u[j] = (beta2 * u[j]).max(g.abs());
                if u[j] > 0.0 {
                    *w -= lr * mu[j] / u[j];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let mut opt = Adamax::new(AdamaxConfig::default(), &[3]);
        opt.step(&mut [&mut p], &[vec![0.0; 3]]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_hand_evaluated() {
        let mut p = scalar_param(0.0);
        let mut opt = Adamax::new(AdamaxConfig::default(), &[1]);
        opt.step(&mut [&mut p], &[vec![0.1]]).unwrap();
        assert!((opt.moments()[0][0] - 0.05).abs() < 1e-18);
        assert_eq!(opt.norms()[0][0], 0.1);
        // -0.0005 * (0.05 / 0.5) / 0.1 = -0.0005
        assert!((p.data()[0] + 0.0005).abs() < 1e-15);
    }

    #[test]
    fn second_identical_step_hand_evaluated() {
        let mut p = scalar_param(0.0);
        let mut opt = Adamax::new(AdamaxConfig::default(), &[1]);
        opt.step(&mut [&mut p], &[vec![0.1]]).unwrap();
        let after_first = p.data()[0];
        opt.step(&mut [&mut p], &[vec![0.1]]).unwrap();
        let delta = p.data()[0] - after_first;
        // mu2 = 0.5*0.05 + 0.5*0.1 = 0.075; u2 = max(0.0999, 0.1) = 0.1;
        // delta = -0.0005 / (1 - 0.25) * 0.075 / 0.1 = -0.0005
        let expected = -0.0005 / 0.75 * (0.075 / 0.1);
        assert!(delta < 0.0);
        assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
    }

    #[test]
    fn non_finite_gradient_refused_without_mutation() {
        let mut p = scalar_param(1.0);
        let mut opt = Adamax::new(AdamaxConfig::default(), &[1]);
        let before = opt.clone();
        let err = opt.step(&mut [&mut p], &[vec![f64::NAN]]).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { param: 0, index: 0 });
        assert_eq!(opt, before);
        assert_eq!(p.data(), &[1.0]);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut p = scalar_param(1.0);
        let mut opt = Adamax::new(AdamaxConfig::default(), &[1]);
        assert!(matches!(
            opt.step(&mut [&mut p], &[vec![0.1, 0.2]]),
            Err(NnError::GradientMismatch(_))
        ));
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut w = Tensor::vector(vec![1.5, -0.8, 0.3, 2.0]).unwrap();
        let mut opt = Adamax::new(AdamaxConfig::default(), &[4]);
        let f = |w: &Tensor| 0.5 * w.data().iter().map(|v| v * v).sum::<f64>();
        let mut prev = f64::INFINITY;
        for step in 0..1000 {
            let g = w.data().to_vec();
            opt.step(&mut [&mut w], &[g]).unwrap();
            let now = f(&w);
            if step > 0 {
                assert!(now < prev, "step {step}: {now} >= {prev}");
            }
            prev = now;
        }
    }

    /// `|mu| / u` can slightly exceed 1 when gradients shrink at exactly the
    /// beta2 rate; the tight bound is `(1 - b1) / (1 - b1 / b2)`.
    #[test]
    fn update_bound_is_attained_by_beta2_decay() {
        let cfg = AdamaxConfig::default();
        let mut w = scalar_param(0.0);
        let mut opt = Adamax::new(cfg, &[1]);
        let mut worst_ratio = 0.0_f64;
        for t in 1..=200 {
            let before = w.data()[0];
            let g = cfg.beta2.powi(t);
            opt.step(&mut [&mut w], &[vec![g]]).unwrap();
            let bound = cfg.alpha / (1.0 - cfg.beta1.powi(t));
            worst_ratio = worst_ratio.max((w.data()[0] - before).abs() / bound);
        }
        let tight = (1.0 - cfg.beta1) / (1.0 - cfg.beta1 / cfg.beta2);
        assert!(worst_ratio > 1.0);
        assert!(worst_ratio <= tight * (1.0 + 1e-12));
    }

    proptest! {
        #[test]
        fn step_magnitude_bounded(grads in proptest::collection::vec(-10.0f64..10.0, 1..60)) {
            let cfg = AdamaxConfig::default();
            let tight = (1.0 - cfg.beta1) / (1.0 - cfg.beta1 / cfg.beta2);
            let mut w = scalar_param(0.0);
            let mut opt = Adamax::new(cfg, &[1]);
            for (i, g) in grads.iter().enumerate() {
                let before = w.data()[0];
                opt.step(&mut [&mut w], &[vec![*g]]).unwrap();
                let bound = cfg.alpha / (1.0 - cfg.beta1.powi(i as i32 + 1));
                prop_assert!((w.data()[0] - before).abs() <= bound * tight * (1.0 + 1e-12));
                prop_assert!(opt.norms()[0][0] >= 0.0);
            }
        }

        #[test]
        fn copied_state_replays_bitwise(grads in proptest::collection::vec(-1.0f64..1.0, 1..30)) {
            let mut w1 = Tensor::vector(vec![0.3, -0.2]).unwrap();
            let mut opt1 = Adamax::new(AdamaxConfig::default(), &[2]);
            opt1.step(&mut [&mut w1], &[vec![0.5, -0.5]]).unwrap();
            let mut w2 = w1.clone();
            let mut opt2 = opt1.clone();
            for g in &grads {
                opt1.step(&mut [&mut w1], &[vec![*g, -g]]).unwrap();
                opt2.step(&mut [&mut w2], &[vec![*g, -g]]).unwrap();
            }
            let b1: Vec<u64> = w1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = w2.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(b1, b2);
        }
    }
}
