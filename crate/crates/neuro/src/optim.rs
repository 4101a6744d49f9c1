use crate::params::ParamSet;

/// Adam with bias-corrected moments and decoupled weight decay.
///
/// Decay is applied directly to the weights (`θ ← θ − lr·wd·θ`) and skips
/// parameters flagged `weight_decay_exempt`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = ps.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads` is aligned with `ps`; `None` means the
    /// parameter received no gradient this step (treated as zero).
    pub fn step(&mut self, ps: &mut ParamSet, grads: &[Option<Vec<f32>>]) {
        assert_eq!(grads.len(), ps.len(), "gradient list does not match parameter set");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = ps.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = ps.get_mut(id);
            if !p.trainable {
                continue;
            }
            let decay = if p.weight_decay_exempt { 0.0 } else { self.weight_decay };
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            let g = grads[k].as_deref();
            for i in 0..p.data.len() {
                let gi = g.map_or(0.0, |g| g[i] as f64);
                let mi = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                m[i] = mi;
                v[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let theta = p.data[i] as f64;
                let updated = theta - self.lr * (mhat / (vhat.sqrt() + self.eps) + decay * theta);
                p.data[i] = updated as f32;
            }
        }
    }
}
