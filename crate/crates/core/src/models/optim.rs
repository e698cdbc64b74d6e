/// Adaptive-moment optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Adaptive-gradient optimizer used for the optional warm-up phase.
#[derive(Debug, Clone)]
pub struct Adagrad {
    pub learning_rate: f64,
    eps: f64,
    sum_sq: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            eps: 1e-8,
            sum_sq: Vec::new(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        if self.sum_sq.is_empty() {
            self.sum_sq = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.sum_sq) {
            for i in 0..p.len() {
                s[i] += g[i] * g[i];
                p[i] -= self.learning_rate * g[i] / (s[i].sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Adagrad(Adagrad),
}

impl Optimizer {
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        match self {
            Optimizer::Adam(o) => o.update(params, grads),
            Optimizer::Adagrad(o) => o.update(params, grads),
        }
    }
}
