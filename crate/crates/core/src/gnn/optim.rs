use super::params::Parameters;

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let n = params.num_params();
        if self.first.len() != n {
            self.first = vec![0.0; n];
            self.second = vec![0.0; n];
            self.step = 0;
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut k = 0;
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (w, &dw) in p.iter_mut().zip(g) {
                let m = &mut self.first[k];
                let v = &mut self.second[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * dw;
                *v = self.beta2 * *v + (1.0 - self.beta2) * dw * dw;
                *w -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
                k += 1;
            }
        }
    }
}
