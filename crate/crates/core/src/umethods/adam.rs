use crate::Scalar;

/// Adam with one moment buffer per parameter slot.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(eps: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Forgets all moments (used when the parameter set changes shape).
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.clear();
        self.v.clear();
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Starts a new iteration; call once before the `update`s of that iteration.
    pub fn begin(&mut self) {
        self.step += 1;
    }

    /// Updates slot `slot` in place. `lr(i)` is the step size of element `i`.
    pub fn update(&mut self, slot: usize, params: &mut [T], grads: &[T], lr: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
        assert!(self.step > 0, "begin() not called");
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].len() != params.len() {
            self.m[slot] = vec![T::zero(); params.len()];
            self.v[slot] = vec![T::zero(); params.len()];
        }
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let eps = T::lit(self.eps);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mh = m[i] / T::lit(c1);
            let vh = v[i] / T::lit(c2);
            params[i] -= T::lit(lr(i)) * mh / (vh.sqrt() + eps);
        }
    }
}

/// Log-linear interpolation from `start` to `end` over `steps` (the step index is clamped).
pub fn exp_decay(start: f64, end: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 || start <= 0.0 || end <= 0.0 {
        return start;
    }
    let t = (step as f64 / (steps - 1) as f64).clamp(0.0, 1.0);
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}
