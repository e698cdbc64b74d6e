//! Dense, batch-normalization, dropout and LSTM building blocks with
//! hand-written backward passes.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v < 0.0 {
                    0.0
                } else {
                    v
                }
            }
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// How a forward pass treats batch normalization and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Batch statistics, dropout on.
    Train,
    /// Running statistics, no dropout (inference and gradient checking).
    Frozen,
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Weighted mean cross-entropy and its gradient with respect to the logits.
/// `weights[r]` is 1 for rows that count and 0 for padding.
pub fn cross_entropy(probs: &Array2<f64>, targets: &[usize], weights: &[f64]) -> (f64, Array2<f64>) {
    let total: f64 = weights.iter().sum();
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (r, mut row) in grad.rows_mut().into_iter().enumerate() {
        let w = weights[r];
        if w == 0.0 {
            row.fill(0.0);
            continue;
        }
        let t = targets[r];
        let p = probs[[r, t]];
        // NaN must survive so divergence is visible to the caller.
        loss -= w * if p.is_nan() { p } else { p.max(f64::MIN_POSITIVE) }.ln();
        row[t] -= 1.0;
        row.mapv_inplace(|v| v * w / total);
    }
    (loss / total, grad)
}

pub fn he_normal<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
    Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(in, out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: he_normal(rng, fan_in, fan_out),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Returns `dx` and accumulates parameter gradients into `grad`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Dense -> batch norm -> activation -> inverted dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub dense: Dense,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

pub struct BlockCache {
    x: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    act: Array2<f64>,
    keep: Option<Array2<f64>>,
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

impl BlockCache {
    /// Batch mean and variance when the pass used batch statistics.
    pub fn batch_stats(&self) -> Option<&(Array1<f64>, Array1<f64>)> {
        self.batch_stats.as_ref()
    }
}

impl DenseBlock {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, width: usize, activation: Activation, dropout: f64) -> Self {
        Self {
            dense: Dense::new(rng, fan_in, width),
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            activation,
            dropout,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dense: self.dense.zeros_like(),
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
            running_mean: Array1::zeros(self.gamma.len()),
            running_var: Array1::zeros(self.gamma.len()),
            activation: self.activation,
            dropout: self.dropout,
        }
    }

    /// `row_weights` marks real rows (1) and padding (0); statistics use real rows only.
    pub fn forward<R: Rng>(
        &self,
        x: Array2<f64>,
        row_weights: Option<&Array1<f64>>,
        pass: Pass,
        rng: &mut R,
    ) -> (Array2<f64>, BlockCache) {
        let z = self.dense.forward(x.view());
        let (mean, var, batch_stats) = match pass {
            Pass::Train => {
                let (mean, var) = masked_moments(&z, row_weights);
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            Pass::Frozen => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut xhat = z;
        xhat -= &mean;
        xhat *= &inv_std;
        let mut act = &xhat * &self.gamma + &self.beta;
        let activation = self.activation;
        act.mapv_inplace(|v| activation.apply(v));
        let keep = if pass == Pass::Train && self.dropout > 0.0 {
            let scale = 1.0 / (1.0 - self.dropout);
            let p = self.dropout;
            Some(Array2::from_shape_simple_fn(act.raw_dim(), || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    scale
                }
            }))
        } else {
            None
        };
        let out = match &keep {
            Some(k) => &act * k,
            None => act.clone(),
        };
        (
            out,
            BlockCache {
                x,
                xhat,
                inv_std,
                act,
                keep,
                batch_stats,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &BlockCache,
        dout: &Array2<f64>,
        row_weights: Option<&Array1<f64>>,
        grad: &mut DenseBlock,
    ) -> Array2<f64> {
        let mut dy = match &cache.keep {
            Some(k) => dout * k,
            None => dout.clone(),
        };
        let activation = self.activation;
        Zip::from(&mut dy)
            .and(&cache.act)
            .for_each(|d, &a| *d *= activation.slope(a));
        if let Some(w) = row_weights {
            dy *= &w.view().insert_axis(Axis(1));
        }
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let dz = if cache.batch_stats.is_some() {
            let m = row_weights.map_or(dxhat.nrows() as f64, |w| w.sum());
            let sum_d = dxhat.sum_axis(Axis(0));
            let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let mut dz = dxhat * m;
            dz -= &sum_d;
            dz -= &(&cache.xhat * &sum_dx);
            dz *= &(&cache.inv_std / m);
            if let Some(w) = row_weights {
                dz *= &w.view().insert_axis(Axis(1));
            }
            dz
        } else {
            dxhat * &cache.inv_std
        };
        self.dense.backward(cache.x.view(), &dz, &mut grad.dense)
    }

    pub fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        self.running_mean = &self.running_mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
        self.running_var = &self.running_var * BN_MOMENTUM + var * (1.0 - BN_MOMENTUM);
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut p = self.dense.params();
        p.push(self.gamma.as_slice().expect("standard layout"));
        p.push(self.beta.as_slice().expect("standard layout"));
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.dense.params_mut();
        p.push(self.gamma.as_slice_mut().expect("standard layout"));
        p.push(self.beta.as_slice_mut().expect("standard layout"));
        p
    }

    pub fn running(&self) -> Vec<&[f64]> {
        vec![
            self.running_mean.as_slice().expect("standard layout"),
            self.running_var.as_slice().expect("standard layout"),
        ]
    }

    pub fn running_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.running_mean.as_slice_mut().expect("standard layout"),
            self.running_var.as_slice_mut().expect("standard layout"),
        ]
    }
}

fn masked_moments(z: &Array2<f64>, row_weights: Option<&Array1<f64>>) -> (Array1<f64>, Array1<f64>) {
    match row_weights {
        None => {
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let var = z.var_axis(Axis(0), 0.0);
            (mean, var)
        }
        Some(w) => {
            let m = w.sum().max(1.0);
            let wc = w.view().insert_axis(Axis(1));
            let mean = (z * &wc).sum_axis(Axis(0)) / m;
            let centered = z - &mean;
            let var = (&centered * &centered * &wc).sum_axis(Axis(0)) / m;
            (mean, var)
        }
    }
}

/// A stack of dense blocks applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    pub blocks: Vec<DenseBlock>,
}

impl BlockStack {
    pub fn new<R: Rng>(rng: &mut R, input_dim: usize, layers: &[(usize, Activation)], dropout: f64) -> Self {
        let mut fan_in = input_dim;
        let blocks = layers
            .iter()
            .map(|&(width, act)| {
                let b = DenseBlock::new(rng, fan_in, width, act, dropout);
                fan_in = width;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, DenseBlock::width)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(DenseBlock::zeros_like).collect(),
        }
    }

    pub fn forward<R: Rng>(
        &self,
        x: Array2<f64>,
        row_weights: Option<&Array1<f64>>,
        pass: Pass,
        rng: &mut R,
    ) -> (Array2<f64>, Vec<BlockCache>) {
        let mut h = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(h, row_weights, pass, rng);
            caches.push(cache);
            h = out;
        }
        (h, caches)
    }

    /// Inference without caches.
    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for block in &self.blocks {
            let mut z = block.dense.forward(h.view());
            let scale = block.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()) * &block.gamma;
            z -= &block.running_mean;
            z *= &scale;
            z += &block.beta;
            let act = block.activation;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        h
    }

    pub fn backward(
        &self,
        caches: &[BlockCache],
        dout: Array2<f64>,
        row_weights: Option<&Array1<f64>>,
        grad: &mut BlockStack,
    ) -> Array2<f64> {
        let mut d = dout;
        for ((block, cache), g) in self.blocks.iter().zip(caches).zip(&mut grad.blocks).rev() {
            d = block.backward(cache, &d, row_weights, g);
        }
        d
    }

    pub fn update_running(&mut self, caches: &[BlockCache]) {
        for (block, cache) in self.blocks.iter_mut().zip(caches) {
            if let Some((mean, var)) = &cache.batch_stats {
                block.update_running(mean, var);
            }
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(DenseBlock::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(DenseBlock::params_mut).collect()
    }

    pub fn running(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(DenseBlock::running).collect()
    }

    pub fn running_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(DenseBlock::running_mut).collect()
    }
}

/// LSTM with gate order `[input, forget, cell, output]`. Rows whose mask is 0
/// at a step carry the previous state through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `(in, 4 * hidden)`.
    pub wx: Array2<f64>,
    /// `(hidden, 4 * hidden)`.
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

pub struct LstmCache {
    x: Array3<f64>,
    mask: Array2<f64>,
    h_prev: Vec<Array2<f64>>,
    c_prev: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
    reverse: bool,
}

impl Lstm {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let nx = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("positive sd");
        let nh = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("positive sd");
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            wx: Array2::from_shape_simple_fn((input, 4 * hidden), || nx.sample(rng)),
            wh: Array2::from_shape_simple_fn((hidden, 4 * hidden), || nh.sample(rng)),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    /// `x`: `(batch, steps, in)`, `mask`: `(batch, steps)`. Returns `(batch, steps, hidden)`.
    pub fn forward(&self, x: &Array3<f64>, mask: &Array2<f64>, reverse: bool) -> (Array3<f64>, LstmCache) {
        let (batch, steps, input) = x.dim();
        let hsz = self.hidden();
        let flat = x.view().into_shape_with_order((batch * steps, input)).expect("contiguous");
        let pre = (flat.dot(&self.wx) + &self.b)
            .into_shape_with_order((batch, steps, 4 * hsz))
            .expect("contiguous");
        let mut h = Array2::<f64>::zeros((batch, hsz));
        let mut c = Array2::<f64>::zeros((batch, hsz));
        let mut out = Array3::<f64>::zeros((batch, steps, hsz));
        let mut cache = LstmCache {
            x: x.clone(),
            mask: mask.clone(),
            h_prev: Vec::with_capacity(steps),
            c_prev: Vec::with_capacity(steps),
            gates: Vec::with_capacity(steps),
            tanh_c: Vec::with_capacity(steps),
            reverse,
        };
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for &t in &order {
            let mut g = pre.slice(s![.., t, ..]).to_owned() + h.dot(&self.wh);
            g.slice_mut(s![.., ..2 * hsz]).mapv_inplace(sigmoid);
            g.slice_mut(s![.., 2 * hsz..3 * hsz]).mapv_inplace(f64::tanh);
            g.slice_mut(s![.., 3 * hsz..]).mapv_inplace(sigmoid);
            let i = g.slice(s![.., ..hsz]);
            let f = g.slice(s![.., hsz..2 * hsz]);
            let gg = g.slice(s![.., 2 * hsz..3 * hsz]);
            let o = g.slice(s![.., 3 * hsz..]);
            let c_new = &f * &c + &i * &gg;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            cache.h_prev.push(h.clone());
            cache.c_prev.push(c.clone());
            let m = mask.column(t);
            for r in 0..batch {
                if m[r] != 0.0 {
                    h.row_mut(r).assign(&h_new.row(r));
                    c.row_mut(r).assign(&c_new.row(r));
                }
            }
            out.slice_mut(s![.., t, ..]).assign(&h);
            cache.gates.push(g);
            cache.tanh_c.push(tanh_c);
        }
        (out, cache)
    }

    /// `dh`: gradient w.r.t. every output step. Returns the input gradient.
    pub fn backward(&self, cache: &LstmCache, dh_out: &Array3<f64>, grad: &mut Lstm) -> Array3<f64> {
        let (batch, steps, input) = cache.x.dim();
        let hsz = self.hidden();
        let mut dpre = Array3::<f64>::zeros((batch, steps, 4 * hsz));
        let mut dh = Array2::<f64>::zeros((batch, hsz));
        let mut dc = Array2::<f64>::zeros((batch, hsz));
        let order: Vec<usize> = if cache.reverse { (0..steps).collect() } else { (0..steps).rev().collect() };
        for (k, &t) in order.iter().enumerate() {
            let idx = steps - 1 - k;
            dh += &dh_out.slice(s![.., t, ..]);
            let g = &cache.gates[idx];
            let i = g.slice(s![.., ..hsz]);
            let f = g.slice(s![.., hsz..2 * hsz]);
            let gg = g.slice(s![.., 2 * hsz..3 * hsz]);
            let o = g.slice(s![.., 3 * hsz..]);
            let tanh_c = &cache.tanh_c[idx];
            let c_prev = &cache.c_prev[idx];
            let m = cache.mask.column(t).to_owned().insert_axis(Axis(1));
            let keep = m.mapv(|v| 1.0 - v);

            let dh_new = &dh * &m;
            let dc_new = &dc * &m + &dh_new * &o * &tanh_c.mapv(|v| 1.0 - v * v);
            let mut dg = Array2::<f64>::zeros((batch, 4 * hsz));
            dg.slice_mut(s![.., ..hsz]).assign(&(&dc_new * &gg * &i * &i.mapv(|v| 1.0 - v)));
            dg.slice_mut(s![.., hsz..2 * hsz]).assign(&(&dc_new * c_prev * &f * &f.mapv(|v| 1.0 - v)));
            dg.slice_mut(s![.., 2 * hsz..3 * hsz]).assign(&(&dc_new * &i * &gg.mapv(|v| 1.0 - v * v)));
            dg.slice_mut(s![.., 3 * hsz..]).assign(&(&dh_new * tanh_c * &o * &o.mapv(|v| 1.0 - v)));

            grad.wh += &cache.h_prev[idx].t().dot(&dg);
            dh = dg.dot(&self.wh.t()) + &dh * &keep;
            dc = &dc_new * &f + &dc * &keep;
            dpre.slice_mut(s![.., t, ..]).assign(&dg);
        }
        let flat_x = cache.x.view().into_shape_with_order((batch * steps, input)).expect("contiguous");
        let flat_d = dpre.into_shape_with_order((batch * steps, 4 * hsz)).expect("contiguous");
        grad.wx += &flat_x.t().dot(&flat_d);
        grad.b += &flat_d.sum_axis(Axis(0));
        flat_d
            .dot(&self.wx.t())
            .into_shape_with_order((batch, steps, input))
            .expect("contiguous")
    }

    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            self.wx.as_slice().expect("standard layout"),
            self.wh.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wx.as_slice_mut().expect("standard layout"),
            self.wh.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}
