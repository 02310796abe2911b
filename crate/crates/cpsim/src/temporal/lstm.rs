//! LSTM autoencoder for BEV flow reconstruction, implemented from scratch
//! with exact backpropagation through time and an Adam trainer.
//!
//! The encoder runs two LSTM layers over the K+1 flow steps and keeps the
//! final hidden state as the latent vector, which is repeated K+1 times and
//! decoded by a three-layer LSTM; a time-distributed affine layer projects
//! each decoder step back to the 8 corner coordinates. Reconstruction error
//! is the mean absolute error over the K history steps and 8 components,
//! which is also the training objective.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM layer: output/forget/input gates and the candidate transform,
/// all over the concatenated [hidden, input] vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub w_o: Array2<f64>,
    pub w_f: Array2<f64>,
    pub w_g: Array2<f64>,
    pub w_c: Array2<f64>,
    pub b_o: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_g: Array1<f64>,
    pub b_c: Array1<f64>,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Per-step forward cache for backpropagation.
struct StepCache {
    u: Array1<f64>,
    o: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    chat: Array1<f64>,
    c_prev: Array1<f64>,
    tc: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmLayerGrads {
    pub w_o: Array2<f64>,
    pub w_f: Array2<f64>,
    pub w_g: Array2<f64>,
    pub w_c: Array2<f64>,
    pub b_o: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_g: Array1<f64>,
    pub b_c: Array1<f64>,
}

impl LstmLayer {
    fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = input_dim + hidden;
        let s = 1.0 / (fan_in as f64).sqrt();
        let mat = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((hidden, fan_in), |_| rng.gen_range(-s..s))
        };
        let w_o = mat(rng);
        let w_f = mat(rng);
        let w_g = mat(rng);
        let w_c = mat(rng);
        let zeros = Array1::zeros(hidden);
        Self {
            w_o,
            w_f,
            w_g,
            w_c,
            b_o: zeros.clone(),
            b_f: zeros.clone(),
            b_g: zeros.clone(),
            b_c: zeros,
            input_dim,
            hidden,
        }
    }

    fn zero_grads(&self) -> LstmLayerGrads {
        LstmLayerGrads {
            w_o: Array2::zeros(self.w_o.dim()),
            w_f: Array2::zeros(self.w_f.dim()),
            w_g: Array2::zeros(self.w_g.dim()),
            w_c: Array2::zeros(self.w_c.dim()),
            b_o: Array1::zeros(self.hidden),
            b_f: Array1::zeros(self.hidden),
            b_g: Array1::zeros(self.hidden),
            b_c: Array1::zeros(self.hidden),
        }
    }

    fn step(
        &self,
        h_prev: &Array1<f64>,
        c_prev: &Array1<f64>,
        x: &Array1<f64>,
    ) -> (Array1<f64>, Array1<f64>, StepCache) {
        let mut u = Array1::zeros(self.hidden + self.input_dim);
        u.slice_mut(ndarray::s![..self.hidden]).assign(h_prev);
        u.slice_mut(ndarray::s![self.hidden..]).assign(x);
        let o = (self.w_o.dot(&u) + &self.b_o).mapv(sigmoid);
        let f = (self.w_f.dot(&u) + &self.b_f).mapv(sigmoid);
        let g = (self.w_g.dot(&u) + &self.b_g).mapv(sigmoid);
        let chat = (self.w_c.dot(&u) + &self.b_c).mapv(f64::tanh);
        let c = &f * c_prev + &g * &chat;
        let tc = c.mapv(f64::tanh);
        let h = &o * &tc;
        let cache = StepCache { u, o, f, g, chat, c_prev: c_prev.clone(), tc };
        (h, c, cache)
    }

    /// Run the layer over a sequence; returns hidden states and caches.
    fn forward(&self, xs: &[Array1<f64>]) -> (Vec<Array1<f64>>, Vec<StepCache>) {
        let mut h = Array1::zeros(self.hidden);
        let mut c = Array1::zeros(self.hidden);
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (h_new, c_new, cache) = self.step(&h, &c, x);
            h = h_new;
            c = c_new;
            hs.push(h.clone());
            caches.push(cache);
        }
        (hs, caches)
    }

    /// Backpropagate through time. `dh_seq` holds the loss gradient of each
    /// step's hidden output; returns the gradient of each step's input.
    fn backward(
        &self,
        caches: &[StepCache],
        dh_seq: &[Array1<f64>],
        grads: &mut LstmLayerGrads,
    ) -> Vec<Array1<f64>> {
        let t_len = caches.len();
        let mut dxs = vec![Array1::zeros(self.input_dim); t_len];
        let mut dh_next = Array1::zeros(self.hidden);
        let mut dc_next = Array1::zeros(self.hidden);
        for t in (0..t_len).rev() {
            let cache = &caches[t];
            let dh = &dh_seq[t] + &dh_next;
            let d_o = &dh * &cache.tc;
            let d_tc = &dh * &cache.o;
            let dc = &dc_next + &(&d_tc * &cache.tc.mapv(|v| 1.0 - v * v));
            let d_f = &dc * &cache.c_prev;
            let d_g = &dc * &cache.chat;
            let d_chat = &dc * &cache.g;
            dc_next = &dc * &cache.f;
            let dz_o = &d_o * &cache.o.mapv(|v| v * (1.0 - v));
            let dz_f = &d_f * &cache.f.mapv(|v| v * (1.0 - v));
            let dz_g = &d_g * &cache.g.mapv(|v| v * (1.0 - v));
            let dz_c = &d_chat * &cache.chat.mapv(|v| 1.0 - v * v);

            let u_row = cache.u.view().insert_axis(Axis(0));
            grads.w_o += &dz_o.view().insert_axis(Axis(1)).dot(&u_row);
            grads.w_f += &dz_f.view().insert_axis(Axis(1)).dot(&u_row);
            grads.w_g += &dz_g.view().insert_axis(Axis(1)).dot(&u_row);
            grads.w_c += &dz_c.view().insert_axis(Axis(1)).dot(&u_row);
            grads.b_o += &dz_o;
            grads.b_f += &dz_f;
            grads.b_g += &dz_g;
            grads.b_c += &dz_c;

            let du = self.w_o.t().dot(&dz_o)
                + self.w_f.t().dot(&dz_f)
                + self.w_g.t().dot(&dz_g)
                + self.w_c.t().dot(&dz_c);
            dh_next = du.slice(ndarray::s![..self.hidden]).to_owned();
            dxs[t] = du.slice(ndarray::s![self.hidden..]).to_owned();
        }
        dxs
    }
}

/// One LSTM cell evaluation with explicit inputs, exposed for direct tests
/// of the gate equations.
pub fn lstm_cell(
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
    x: &Array1<f64>,
    layer: &LstmLayer,
) -> (Array1<f64>, Array1<f64>) {
    let (h, c, _) = layer.step(h_prev, c_prev, x);
    (h, c)
}

pub const FLOW_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmAeModel {
    pub hidden: usize,
    /// History length the model was trained with (flows have k_hist+1 steps;
    /// reconstruction adapts to the input length).
    pub k_hist: usize,
    /// Grid extents used to normalize corner coordinates into [0, 1].
    pub grid: (usize, usize),
    pub enc1: LstmLayer,
    pub enc2: LstmLayer,
    pub dec1: LstmLayer,
    pub dec2: LstmLayer,
    pub dec3: LstmLayer,
    pub td_w: Array2<f64>,
    pub td_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub enc1: LstmLayerGrads,
    pub enc2: LstmLayerGrads,
    pub dec1: LstmLayerGrads,
    pub dec2: LstmLayerGrads,
    pub dec3: LstmLayerGrads,
    pub td_w: Array2<f64>,
    pub td_b: Array1<f64>,
}

impl LstmAeModel {
    pub fn init(hidden: usize, k_hist: usize, grid: (usize, usize), rng: &mut ChaCha8Rng) -> Self {
        let enc1 = LstmLayer::init(FLOW_DIM, hidden, rng);
        let enc2 = LstmLayer::init(hidden, hidden, rng);
        let dec1 = LstmLayer::init(hidden, hidden, rng);
        let dec2 = LstmLayer::init(hidden, hidden, rng);
        let dec3 = LstmLayer::init(hidden, hidden, rng);
        let s = 1.0 / (hidden as f64).sqrt();
        let td_w = Array2::from_shape_fn((FLOW_DIM, hidden), |_| rng.gen_range(-s..s));
        let td_b = Array1::zeros(FLOW_DIM);
        Self { hidden, k_hist, grid, enc1, enc2, dec1, dec2, dec3, td_w, td_b }
    }

    fn rows(flow: &Array2<f64>) -> Vec<Array1<f64>> {
        flow.axis_iter(Axis(0)).map(|r| r.to_owned()).collect()
    }

    /// Latent encoding: final hidden state of the second encoder layer.
    pub fn encode(&self, flow: &Array2<f64>) -> Array1<f64> {
        let xs = Self::rows(flow);
        let (h1, _) = self.enc1.forward(&xs);
        let (h2, _) = self.enc2.forward(&h1);
        h2.last().cloned().unwrap_or_else(|| Array1::zeros(self.hidden))
    }

    /// Repeated-latent feature: the latent stacked once per step.
    pub fn encode_repeated(&self, flow: &Array2<f64>) -> Array2<f64> {
        let latent = self.encode(flow);
        let t = flow.nrows();
        let mut out = Array2::zeros((t, self.hidden));
        for mut row in out.axis_iter_mut(Axis(0)) {
            row.assign(&latent);
        }
        out
    }

    /// Decode a repeated-latent feature into a (steps x 8) reconstruction.
    pub fn decode(&self, h_bf: &Array2<f64>) -> Array2<f64> {
        let xs = Self::rows(h_bf);
        let (h3, _) = self.dec1.forward(&xs);
        let (h4, _) = self.dec2.forward(&h3);
        let (h5, _) = self.dec3.forward(&h4);
        let mut out = Array2::zeros((xs.len(), FLOW_DIM));
        for (t, h) in h5.iter().enumerate() {
            let y = self.td_w.dot(h) + &self.td_b;
            out.row_mut(t).assign(&y);
        }
        out
    }

    pub fn reconstruct(&self, flow: &Array2<f64>) -> Array2<f64> {
        self.decode(&self.encode_repeated(flow))
    }

    /// Training loss and exact parameter gradients for one flow.
    pub fn loss_and_grads(&self, flow: &Array2<f64>) -> (f64, ModelGrads) {
        let t_len = flow.nrows();
        let xs = Self::rows(flow);
        let (h1, c1) = self.enc1.forward(&xs);
        let (h2, c2) = self.enc2.forward(&h1);
        let latent = h2.last().cloned().expect("non-empty flow");
        let dec_in: Vec<Array1<f64>> = (0..t_len).map(|_| latent.clone()).collect();
        let (h3, c3) = self.dec1.forward(&dec_in);
        let (h4, c4) = self.dec2.forward(&h3);
        let (h5, c5) = self.dec3.forward(&h4);

        // Forward loss over the history steps.
        let hist = if t_len > 1 { t_len - 1 } else { 1 };
        let denom = (hist * FLOW_DIM) as f64;
        let mut loss = 0.0;
        let mut dys: Vec<Array1<f64>> = Vec::with_capacity(t_len);
        for (t, h) in h5.iter().enumerate() {
            let y = self.td_w.dot(h) + &self.td_b;
            let target = &xs[t];
            let mut dy = Array1::zeros(FLOW_DIM);
            if t < hist {
                for d in 0..FLOW_DIM {
                    let r: f64 = y[d] - target[d];
                    loss += r.abs() / denom;
                    dy[d] = r.signum() / denom;
                }
            }
            dys.push(dy);
        }

        // Backward: time-distributed projection.
        let mut td_w_g = Array2::zeros(self.td_w.dim());
        let mut td_b_g = Array1::zeros(FLOW_DIM);
        let mut dh5 = vec![Array1::zeros(self.hidden); t_len];
        for t in 0..t_len {
            td_w_g += &dys[t].view().insert_axis(Axis(1)).dot(&h5[t].view().insert_axis(Axis(0)));
            td_b_g += &dys[t];
            dh5[t] = self.td_w.t().dot(&dys[t]);
        }

        let mut dec3_g = self.dec3.zero_grads();
        let dh4 = self.dec3.backward(&c5, &dh5, &mut dec3_g);
        let mut dec2_g = self.dec2.zero_grads();
        let dh3 = self.dec2.backward(&c4, &dh4, &mut dec2_g);
        let mut dec1_g = self.dec1.zero_grads();
        let d_dec_in = self.dec1.backward(&c3, &dh3, &mut dec1_g);

        // The latent feeds every decoder step; its gradient is the sum.
        let mut d_latent = Array1::zeros(self.hidden);
        for d in &d_dec_in {
            d_latent += d;
        }
        let mut dh2 = vec![Array1::zeros(self.hidden); t_len];
        dh2[t_len - 1] = d_latent;
        let mut enc2_g = self.enc2.zero_grads();
        let dh1 = self.enc2.backward(&c2, &dh2, &mut enc2_g);
        let mut enc1_g = self.enc1.zero_grads();
        let _dx = self.enc1.backward(&c1, &dh1, &mut enc1_g);
        let _ = (h1, h2, h3, h4);

        (
            loss,
            ModelGrads {
                enc1: enc1_g,
                enc2: enc2_g,
                dec1: dec1_g,
                dec2: dec2_g,
                dec3: dec3_g,
                td_w: td_w_g,
                td_b: td_b_g,
            },
        )
    }

    /// Parameter tensors in canonical order, flattened views.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2, &mut self.dec3] {
            out.push(layer.w_o.as_slice_mut().unwrap());
            out.push(layer.b_o.as_slice_mut().unwrap());
            out.push(layer.w_f.as_slice_mut().unwrap());
            out.push(layer.b_f.as_slice_mut().unwrap());
            out.push(layer.w_g.as_slice_mut().unwrap());
            out.push(layer.b_g.as_slice_mut().unwrap());
            out.push(layer.w_c.as_slice_mut().unwrap());
            out.push(layer.b_c.as_slice_mut().unwrap());
        }
        out.push(self.td_w.as_slice_mut().unwrap());
        out.push(self.td_b.as_slice_mut().unwrap());
        out
    }

    pub fn param_count(&self) -> usize {
        let layer = |l: &LstmLayer| 4 * (l.hidden * (l.hidden + l.input_dim) + l.hidden);
        layer(&self.enc1)
            + layer(&self.enc2)
            + layer(&self.dec1)
            + layer(&self.dec2)
            + layer(&self.dec3)
            + self.td_w.len()
            + self.td_b.len()
    }
}

impl ModelGrads {
    pub fn zeros(model: &LstmAeModel) -> Self {
        Self {
            enc1: model.enc1.zero_grads(),
            enc2: model.enc2.zero_grads(),
            dec1: model.dec1.zero_grads(),
            dec2: model.dec2.zero_grads(),
            dec3: model.dec3.zero_grads(),
            td_w: Array2::zeros(model.td_w.dim()),
            td_b: Array1::zeros(model.td_b.len()),
        }
    }

    pub fn add(&mut self, other: &ModelGrads) {
        for (a, b) in [
            (&mut self.enc1, &other.enc1),
            (&mut self.enc2, &other.enc2),
            (&mut self.dec1, &other.dec1),
            (&mut self.dec2, &other.dec2),
            (&mut self.dec3, &other.dec3),
        ] {
            a.w_o += &b.w_o;
            a.w_f += &b.w_f;
            a.w_g += &b.w_g;
            a.w_c += &b.w_c;
            a.b_o += &b.b_o;
            a.b_f += &b.b_f;
            a.b_g += &b.b_g;
            a.b_c += &b.b_c;
        }
        self.td_w += &other.td_w;
        self.td_b += &other.td_b;
    }

    pub fn scale(&mut self, s: f64) {
        for layer in [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2, &mut self.dec3] {
            layer.w_o *= s;
            layer.w_f *= s;
            layer.w_g *= s;
            layer.w_c *= s;
            layer.b_o *= s;
            layer.b_f *= s;
            layer.b_g *= s;
            layer.b_c *= s;
        }
        self.td_w *= s;
        self.td_b *= s;
    }

    /// Gradient tensors flattened in the model's canonical order.
    pub fn flat_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in [&self.enc1, &self.enc2, &self.dec1, &self.dec2, &self.dec3] {
            out.push(layer.w_o.as_slice().unwrap());
            out.push(layer.b_o.as_slice().unwrap());
            out.push(layer.w_f.as_slice().unwrap());
            out.push(layer.b_f.as_slice().unwrap());
            out.push(layer.w_g.as_slice().unwrap());
            out.push(layer.b_g.as_slice().unwrap());
            out.push(layer.w_c.as_slice().unwrap());
            out.push(layer.b_c.as_slice().unwrap());
        }
        out.push(self.td_w.as_slice().unwrap());
        out.push(self.td_b.as_slice().unwrap());
        out
    }
}

/// Mean absolute error over the history steps (all but the final step) and
/// the 8 components; a single-step flow is scored on that step alone.
pub fn l_tr(flow: &Array2<f64>, reconstruction: &Array2<f64>) -> f64 {
    assert_eq!(flow.dim(), reconstruction.dim());
    let t_len = flow.nrows();
    let hist = if t_len > 1 { t_len - 1 } else { 1 };
    let mut acc = 0.0;
    for t in 0..hist {
        for d in 0..FLOW_DIM {
            acc += (flow[(t, d)] - reconstruction[(t, d)]).abs();
        }
    }
    acc / (hist * FLOW_DIM) as f64
}

/// Normalize raw grid-coordinate corner steps into [0, 1] by the grid
/// extents.
pub fn normalize_steps(steps: &[[f64; 8]], grid: (usize, usize)) -> Array2<f64> {
    let mut out = Array2::zeros((steps.len(), FLOW_DIM));
    let (w, h) = (grid.0 as f64, grid.1 as f64);
    for (t, s) in steps.iter().enumerate() {
        for d in 0..FLOW_DIM {
            out[(t, d)] = if d % 2 == 0 { s[d] / w } else { s[d] / h };
        }
    }
    out
}

pub const MODEL_SCHEMA: &str = "cpsim.lstm-ae/1";

/// On-disk model wrapper: schema tag plus shape header fields mirrored at
/// the top level for quick inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub hidden: usize,
    pub k_hist: usize,
    pub grid: (usize, usize),
    pub model: LstmAeModel,
}

impl ModelFile {
    pub fn wrap(model: LstmAeModel) -> Self {
        Self {
            schema: MODEL_SCHEMA.to_string(),
            hidden: model.hidden,
            k_hist: model.k_hist,
            grid: model.grid,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<LstmAeModel, String> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.schema != MODEL_SCHEMA {
            return Err(format!("model schema mismatch: {}", file.schema));
        }
        if file.hidden != file.model.hidden || file.grid != file.model.grid {
            return Err("model shape header disagrees with weights".to_string());
        }
        Ok(file.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { hidden: 32, learning_rate: 1e-3, epochs: 30, batch_size: 32, seed: 0 }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    lr: f64,
}

impl Adam {
    fn new(model: &LstmAeModel, lr: f64) -> Self {
        let shapes: Vec<usize> = {
            let mut m = model.clone();
            m.param_slices_mut().iter().map(|s| s.len()).collect()
        };
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut LstmAeModel, grads: &ModelGrads) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        let g_slices = grads.flat_slices();
        for (k, p) in model.param_slices_mut().into_iter().enumerate() {
            let g = g_slices[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + EPS);
            }
        }
    }
}

/// Train the autoencoder on normalized flows by mini-batch Adam.
/// Deterministic given the config seed: initialization, shuffling, and the
/// chunked gradient reduction all follow fixed orders.
///
/// Returns the model and the per-epoch mean training loss.
pub fn train_ae(
    flows: &[Array2<f64>],
    k_hist: usize,
    grid: (usize, usize),
    cfg: &TrainConfig,
) -> Result<(LstmAeModel, Vec<f64>), String> {
    if flows.is_empty() {
        return Err("training requires a non-empty flow dataset".to_string());
    }
    let mut rng = crate::rng::derive(cfg.seed, "lstm-ae-train", &[]);
    let mut model = LstmAeModel::init(cfg.hidden, k_hist, grid, &mut rng);
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..flows.len()).collect();
    for _epoch in 0..cfg.epochs {
        // Fisher-Yates with the training stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Chunked parallel gradient accumulation, folded in chunk order
            // so the reduction is deterministic under any thread count.
            let chunk_results = crate::exec::map_batch(batch, |&idx| model.loss_and_grads(&flows[idx]));
            let mut grads = ModelGrads::zeros(&model);
            let mut batch_loss = 0.0;
            for (loss, g) in &chunk_results {
                batch_loss += loss;
                grads.add(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            epoch_loss += batch_loss;
            adam.step(&mut model, &grads);
        }
        history.push(epoch_loss / flows.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use approx::assert_relative_eq;

    fn tiny_model(hidden: usize, seed: u64) -> LstmAeModel {
        LstmAeModel::init(hidden, 3, (16, 16), &mut derive(seed, "tiny", &[]))
    }

    fn random_flow(t: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut rng = derive(seed, "flow", &[]);
        Array2::from_shape_fn((t, FLOW_DIM), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn zero_weights_give_zero_cell_state() {
        let mut layer = LstmLayer::init(8, 4, &mut derive(0, "z", &[]));
        layer.w_o.fill(0.0);
        layer.w_f.fill(0.0);
        layer.w_g.fill(0.0);
        layer.w_c.fill(0.0);
        let h = Array1::zeros(4);
        let c = Array1::zeros(4);
        let x = Array1::from_elem(8, 0.7);
        let (h1, c1) = lstm_cell(&h, &c, &x, &layer);
        assert!(c1.iter().all(|&v| v == 0.0));
        assert!(h1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_bounded_by_one() {
        use rand::Rng;
        let layer = LstmLayer::init(8, 6, &mut derive(1, "b", &[]));
        let mut rng = derive(2, "bx", &[]);
        let mut h = Array1::zeros(6);
        let mut c = Array1::zeros(6);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(8, |_| rng.gen_range(-3.0..3.0));
            let (h1, c1) = lstm_cell(&h, &c, &x, &layer);
            assert!(h1.iter().all(|&v| v.abs() < 1.0));
            h = h1;
            c = c1;
        }
    }

    /// Finite-difference oracle for the cell: gradient of sum(h) w.r.t.
    /// every weight matches central differences.
    #[test]
    fn cell_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut layer = LstmLayer::init(5, 4, &mut derive(7, "fd", &[]));
        let mut rng = derive(8, "fdx", &[]);
        let x = Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0));
        let xs = vec![x];
        let (_, caches) = layer.forward(&xs);
        let mut grads = layer.zero_grads();
        let dh = vec![Array1::ones(4)];
        layer.backward(&caches, &dh, &mut grads);

        let eps = 1e-6;
        let loss = |layer: &LstmLayer, xs: &[Array1<f64>]| -> f64 {
            let (hs, _) = layer.forward(xs);
            hs.last().unwrap().sum()
        };
        // Check every entry of every tensor.
        macro_rules! check {
            ($w:ident, $g:ident) => {
                for idx in 0..layer.$w.len() {
                    let flat = layer.$w.as_slice_mut().unwrap();
                    let orig = flat[idx];
                    flat[idx] = orig + eps;
                    let up = loss(&layer, &xs);
                    layer.$w.as_slice_mut().unwrap()[idx] = orig - eps;
                    let down = loss(&layer, &xs);
                    layer.$w.as_slice_mut().unwrap()[idx] = orig;
                    let fd = (up - down) / (2.0 * eps);
                    let an = grads.$g.as_slice().unwrap()[idx];
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        ((fd - an) / denom).abs() < 1e-4,
                        "{} idx {idx}: fd {fd} vs analytic {an}",
                        stringify!($w)
                    );
                }
            };
        }
        check!(w_o, w_o);
        check!(w_f, w_f);
        check!(w_g, w_g);
        check!(w_c, w_c);
        check!(b_o, b_o);
        check!(b_f, b_f);
        check!(b_g, b_g);
        check!(b_c, b_c);
    }

    #[test]
    fn single_step_flow_encodes_to_one_latent() {
        let model = tiny_model(6, 3);
        let flow = random_flow(1, 4);
        let rep = model.encode_repeated(&flow);
        assert_eq!(rep.dim(), (1, 6));
    }

    #[test]
    fn repeated_latent_rows_are_identical() {
        let model = tiny_model(6, 3);
        let flow = random_flow(4, 5);
        let rep = model.encode_repeated(&flow);
        let first = rep.row(0).to_owned();
        for row in rep.axis_iter(Axis(0)) {
            assert_eq!(row.to_owned(), first);
        }
    }

    #[test]
    fn encode_is_replay_deterministic() {
        let model = tiny_model(6, 3);
        let flow = random_flow(4, 6);
        assert_eq!(model.encode(&flow), model.encode(&flow));
    }

    #[test]
    fn zero_weight_decoder_outputs_bias_projection() {
        let mut model = tiny_model(5, 9);
        for layer in [&mut model.dec1, &mut model.dec2, &mut model.dec3] {
            layer.w_o.fill(0.0);
            layer.w_f.fill(0.0);
            layer.w_g.fill(0.0);
            layer.w_c.fill(0.0);
            layer.b_o.fill(0.0);
            layer.b_f.fill(0.0);
            layer.b_g.fill(0.0);
            layer.b_c.fill(0.0);
        }
        model.td_b = Array1::from_shape_fn(FLOW_DIM, |i| i as f64 * 0.1);
        let flow = random_flow(4, 10);
        let recon = model.reconstruct(&flow);
        assert_eq!(recon.dim(), (4, FLOW_DIM));
        for t in 0..4 {
            for d in 0..FLOW_DIM {
                assert_relative_eq!(recon[(t, d)], model.td_b[d], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_shape_matches_input() {
        let model = tiny_model(6, 3);
        for t in 1..=6 {
            let flow = random_flow(t, 20 + t as u64);
            assert_eq!(model.reconstruct(&flow).dim(), (t, FLOW_DIM));
        }
    }

    #[test]
    fn l_tr_identity_is_zero_and_unit_gap_is_one() {
        let flow = Array2::ones((4, FLOW_DIM));
        assert_eq!(l_tr(&flow, &flow), 0.0);
        let zeros = Array2::zeros((4, FLOW_DIM));
        assert_relative_eq!(l_tr(&flow, &zeros), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn l_tr_matches_independent_elementwise_mean() {
        use rand::Rng;
        let mut rng = derive(31, "ltr", &[]);
        let a = Array2::from_shape_fn((5, FLOW_DIM), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((5, FLOW_DIM), |_| rng.gen_range(-1.0..1.0));
        let got = l_tr(&a, &b);
        // Independent computation: explicit loops over the history block.
        let mut acc = 0.0;
        let mut n = 0;
        for t in 0..4 {
            for d in 0..FLOW_DIM {
                acc += (a[(t, d)] - b[(t, d)]).abs();
                n += 1;
            }
        }
        assert_relative_eq!(got, acc / n as f64, epsilon = 1e-12);
    }

    /// End-to-end finite-difference check on a small model: every parameter
    /// gradient of the training loss matches central differences.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut model = tiny_model(4, 41);
        let flow = random_flow(4, 42);
        let (_, grads) = model.loss_and_grads(&flow);
        let flat_grads: Vec<f64> = grads.flat_slices().iter().flat_map(|s| s.iter().copied()).collect();
        let eps = 1e-6;
        let n = model.param_count();
        assert_eq!(flat_grads.len(), n);
        let mut worst: f64 = 0.0;
        for idx in 0..n {
            let (up, down);
            {
                let mut slices = model.param_slices_mut();
                let (k, off) = locate(&slices, idx);
                let orig = slices[k][off];
                slices[k][off] = orig + eps;
                drop(slices);
                up = model.loss_and_grads(&flow).0;
                let mut slices = model.param_slices_mut();
                let (k, off) = locate(&slices, idx);
                slices[k][off] = orig - eps;
                drop(slices);
                down = model.loss_and_grads(&flow).0;
                let mut slices = model.param_slices_mut();
                let (k, off) = locate(&slices, idx);
                slices[k][off] = orig;
            }
            let fd = (up - down) / (2.0 * eps);
            let an = flat_grads[idx];
            // The floor keeps vanishing gradients from drowning in central
            // difference roundoff (forward-pass accumulation leaves ~1e-10
            // absolute noise on fd); real gradient bugs differ at O(grad).
            let denom = fd.abs().max(an.abs()).max(1e-5);
            let rel = ((fd - an) / denom).abs();
            worst = worst.max(rel);
            assert!(rel < 1e-4, "param {idx}: fd {fd} vs analytic {an} (rel {rel})");
        }
        assert!(worst < 1e-4);
    }

    fn locate(slices: &[&mut [f64]], mut idx: usize) -> (usize, usize) {
        for (k, s) in slices.iter().enumerate() {
            if idx < s.len() {
                return (k, idx);
            }
            idx -= s.len();
        }
        panic!("index out of range");
    }

    #[test]
    fn training_memorizes_a_single_flow() {
        let flow = random_flow(4, 50);
        let cfg = TrainConfig { hidden: 16, epochs: 1500, batch_size: 1, seed: 3, ..Default::default() };
        let (model, history) = train_ae(&[flow.clone()], 3, (16, 16), &cfg).unwrap();
        let final_loss = l_tr(&flow, &model.reconstruct(&flow));
        assert!(final_loss < 0.02, "final MAE {final_loss}");
        assert!(history.last().unwrap() < &0.02);
    }

    #[test]
    fn different_seeds_differ_but_both_converge() {
        let flow = random_flow(4, 51);
        let mk = |seed| {
            let cfg = TrainConfig { hidden: 12, epochs: 1500, batch_size: 1, seed, ..Default::default() };
            train_ae(&[flow.clone()], 3, (16, 16), &cfg).unwrap()
        };
        let (m1, _) = mk(1);
        let (m2, _) = mk(2);
        assert_ne!(m1.td_w, m2.td_w);
        assert!(l_tr(&flow, &m1.reconstruct(&flow)) < 0.05);
        assert!(l_tr(&flow, &m2.reconstruct(&flow)) < 0.05);
    }

    #[test]
    fn loss_curve_non_increasing_under_moving_average() {
        let flows: Vec<Array2<f64>> = (0..8).map(|i| random_flow(4, 60 + i)).collect();
        let cfg = TrainConfig { hidden: 12, epochs: 300, batch_size: 4, seed: 5, ..Default::default() };
        let (_, history) = train_ae(&flows, 3, (16, 16), &cfg).unwrap();
        let ma: Vec<f64> = history
            .windows(10)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        for w in ma.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "moving average increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(train_ae(&[], 3, (16, 16), &TrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let flows: Vec<Array2<f64>> = (0..4).map(|i| random_flow(4, 70 + i)).collect();
        let cfg = TrainConfig { hidden: 8, epochs: 20, batch_size: 2, seed: 9, ..Default::default() };
        let (m1, h1) = train_ae(&flows, 3, (16, 16), &cfg).unwrap();
        let (m2, h2) = train_ae(&flows, 3, (16, 16), &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn model_file_round_trip() {
        let model = tiny_model(5, 99);
        let text = ModelFile::wrap(model.clone()).to_json();
        let back = ModelFile::from_json(&text).unwrap();
        assert_eq!(model, back);
        assert!(text.contains("cpsim.lstm-ae/1"));
    }

    #[test]
    fn normalization_divides_by_grid_extent() {
        let steps = vec![[8.0, 4.0, 8.0, 4.0, 8.0, 4.0, 8.0, 4.0]];
        let n = normalize_steps(&steps, (16, 8));
        for d in 0..FLOW_DIM {
            assert_relative_eq!(n[(0, d)], 0.5);
        }
    }
}
