//! AdamW with decoupled weight decay and per-group parameter scaling.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers for one parameter tensor.
///
/// The optimizer works on `param / scale`: grid entries live on the 0..=255
/// scale but are optimized as normalized intensities (`scale = 255`), so the
/// learning rate means the same thing as for a network fed [0, 1] images.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub scale: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamGroup {
    pub fn new(len: usize, scale: f64, weight_decay: f64) -> Self {
        Self { scale, weight_decay, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub groups: Vec<ParamGroup>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, groups: Vec<ParamGroup>) -> Result<Self> {
        let c = &config;
        if !(c.lr.is_finite() && c.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", c.lr)));
        }
        if !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
            return Err(Error::InvalidArgument("AdamW betas must be in [0, 1) and eps positive".into()));
        }
        for g in &groups {
            if !(g.scale > 0.0 && g.scale.is_finite()) || !(g.weight_decay >= 0.0 && g.weight_decay.is_finite()) {
                return Err(Error::InvalidArgument("parameter group scale must be positive and decay non-negative".into()));
            }
        }
        Ok(Self { config, step: 0, groups })
    }

    /// Applies one update. `grads[k]` may be `None` to leave group `k` (and its moments) untouched.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer has {} groups, got {} parameter and {} gradient tensors",
                self.groups.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            let len = self.groups[k].m.len();
            if p.len() != len || g.is_some_and(|g| g.len() != len) {
                return Err(Error::ShapeMismatch(format!("optimizer group {k} expects {len} values")));
            }
            if let Some(bad) = g.and_then(|g| g.iter().position(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient of parameter {bad} in group {k} at step {}", self.step + 1)));
            }
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), group) in params.iter_mut().zip(grads).zip(&mut self.groups) {
            let Some(g) = g else { continue };
            let s = group.scale;
            let wd = group.weight_decay;
            for j in 0..p.len() {
                let gn = g[j] * s;
                let m = beta1 * group.m[j] + (1.0 - beta1) * gn;
                let v = beta2 * group.v[j] + (1.0 - beta2) * gn * gn;
                group.m[j] = m;
                group.v[j] = v;
                let update = (m / bc1) / ((v / bc2).sqrt() + eps);
                let x = p[j] as f64 / s;
                let x = x - lr * (update + wd * x);
                p[j] = (x * s) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(decay: f64, scale: f64) -> AdamW {
        AdamW::new(AdamWConfig::default(), vec![ParamGroup::new(3, scale, decay)]).unwrap()
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut o = opt(0.0, 1.0);
        let mut p = vec![0.5f32, -2.0, 9.0];
        let before = p.clone();
        for _ in 0..5 {
            o.step(&mut [&mut p], &[Some(&[0.0; 3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(o.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for scale in [1.0, 255.0] {
            let mut o = opt(0.0, scale);
            let mut p = vec![1.0f32, 1.0, 1.0];
            o.step(&mut [&mut p], &[Some(&[0.3, -2.0, 1e3])]).unwrap();
            let lr = 5e-5 * scale;
            for (x, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
                let d = (*x as f64 - 1.0) * sign;
                assert!((d - lr).abs() <= 0.01 * lr, "scale {scale}: step {d}");
            }
        }
    }

    #[test]
    fn decay_shrinks_without_gradient() {
        let mut o = opt(0.1, 1.0);
        let mut p = vec![3.0f32, -3.0, 0.5];
        let before = p.clone();
        o.step(&mut [&mut p], &[Some(&[0.0; 3])]).unwrap();
        for (a, b) in p.iter().zip(&before) {
            assert!(a.abs() < b.abs());
        }
    }

    #[test]
    fn rejects_non_finite_and_shape() {
        let mut o = opt(0.0, 1.0);
        let mut p = vec![0.0f32; 3];
        assert!(matches!(o.step(&mut [&mut p], &[Some(&[0.0, f64::NAN, 0.0])]), Err(Error::NonFinite(_))));
        assert_eq!(o.step, 0);
        assert!(o.step(&mut [&mut p], &[Some(&[0.0; 2])]).is_err());
        assert!(AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() }, vec![]).is_err());
    }

    #[test]
    fn skipped_group_keeps_moments() {
        let mut o = opt(0.0, 1.0);
        let mut p = vec![0.0f32; 3];
        o.step(&mut [&mut p], &[None]).unwrap();
        assert_eq!(p, vec![0.0; 3]);
        assert!(o.groups[0].m.iter().all(|v| *v == 0.0));
    }
}
