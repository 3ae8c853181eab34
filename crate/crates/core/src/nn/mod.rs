//! Dense MLPs with hand-written reverse-mode gradients.
//!
//! Weights are stored `in × out` so a layer is `Y = X W + b` on row batches.
//! Every [`Network`] exposes `forward` returning a [`Cache`] and `backward`
//! consuming it; objectives compose these by hand.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, relative_error, GRADCHECK_STEP};
pub use loss::{infonce_loss, l2_normalize_rows, mse_loss, normalize_rows_backward};
pub use optim::{cosine_lr, AdamW, AdamWConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{t_mul, Mat};
use crate::rng::{normal, Stream};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh()),
        }
    }

    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Gelu => {
                let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// LayerNorm followed by tanh on the output.
    pub output_normalize: bool,
    pub dropout_rate: f64,
}

impl NetworkSpec {
    pub fn mlp(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        let mut layer_widths = vec![input];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(output);
        NetworkSpec { layer_widths, activation, output_normalize: false, dropout_rate: 0.0 }
    }

    pub fn normalized(mut self) -> Self {
        self.output_normalize = true;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return Err(Error::InvalidSpec(format!("bad layer widths {:?}", self.layer_widths)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidSpec(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Shapes of the parameter list: `W_i, b_i` per layer, then `γ, β` when
    /// normalized.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for w in self.layer_widths.windows(2) {
            shapes.push((w[0], w[1]));
            shapes.push((1, w[1]));
        }
        if self.output_normalize {
            shapes.push((1, self.output_dim()));
            shapes.push((1, self.output_dim()));
        }
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Mat>,
}

/// Intermediates saved by `forward` for `backward`.
pub struct Cache {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
    /// Activations before dropout.
    post: Vec<Mat>,
    masks: Vec<Option<Mat>>,
    norm: Option<NormCache>,
}

struct NormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
    out: Mat,
}

fn add_row(m: &mut Mat, b: &Mat) {
    for j in 0..m.ncols() {
        let bj = b[(0, j)];
        m.column_mut(j).add_scalar_mut(bj);
    }
}

fn column_sums(m: &Mat) -> Mat {
    Mat::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
}

impl Network {
    /// LeCun-normal weights (`std = 1/√fan_in`), zero biases, unit gain.
    pub fn new(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for w in spec.layer_widths.windows(2) {
            let std = 1.0 / (w[0] as f64).sqrt();
            params.push(Mat::from_fn(w[0], w[1], |_, _| std * normal(rng)));
            params.push(Mat::zeros(1, w[1]));
        }
        if spec.output_normalize {
            params.push(Mat::from_element(1, spec.output_dim(), 1.0));
            params.push(Mat::zeros(1, spec.output_dim()));
        }
        Ok(Network { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Mat>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.shape()) {
            return Err(Error::Shape("parameter shapes do not match network spec".into()));
        }
        if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Network { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Mat::zeros(p.nrows(), p.ncols())).collect()
    }

    pub fn forward(&self, x: &Mat, mode: Mode, rng: &mut Stream) -> Result<(Mat, Cache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        let n_layers = self.spec.n_layers();
        let mut cache = Cache {
            inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_layers),
            post: Vec::with_capacity(n_layers),
            masks: Vec::with_capacity(n_layers),
            norm: None,
        };
        let mut h = x.clone();
        let act = self.spec.activation;
        let p = self.spec.dropout_rate;
        for l in 0..n_layers {
            let mut z = &h * &self.params[2 * l];
            add_row(&mut z, &self.params[2 * l + 1]);
            cache.inputs.push(h);
            if l + 1 < n_layers {
                let mut y = z.map(|v| act.apply(v));
                cache.post.push(y.clone());
                let mask = if mode == Mode::Train && p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let m = Mat::from_fn(y.nrows(), y.ncols(), |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
                    y.component_mul_assign(&m);
                    Some(m)
                } else {
                    None
                };
                cache.pre.push(z);
                cache.masks.push(mask);
                h = y;
            } else {
                cache.pre.push(z.clone());
                cache.post.push(Mat::zeros(0, 0));
                cache.masks.push(None);
                h = z;
            }
        }
        if self.spec.output_normalize {
            let gamma = &self.params[2 * n_layers];
            let beta = &self.params[2 * n_layers + 1];
            let (n, e) = h.shape();
            let mut xhat = Mat::zeros(n, e);
            let mut inv_std = Vec::with_capacity(n);
            for i in 0..n {
                let row = h.row(i);
                let mu = row.mean();
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / e as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..e {
                    xhat[(i, j)] = (h[(i, j)] - mu) * is;
                }
                inv_std.push(is);
            }
            let mut out = xhat.clone();
            for j in 0..e {
                let (g, b) = (gamma[(0, j)], beta[(0, j)]);
                out.column_mut(j).apply(|v| *v = (g * *v + b).tanh());
            }
            cache.norm = Some(NormCache { xhat, inv_std, out: out.clone() });
            h = out;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((h, cache))
    }

    /// Forward pass in eval mode without keeping the cache.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        // eval mode draws no random numbers
        let mut rng = crate::rng::stream(0, &["unused"]);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.0)
    }

    /// Gradients of `Σ dout ⊙ output` with respect to parameters and input.
    pub fn backward(&self, cache: &Cache, dout: &Mat) -> (Vec<Mat>, Mat) {
        let n_layers = self.spec.n_layers();
        let mut grads = self.zero_grads();
        let mut g = dout.clone();
        if let Some(nc) = &cache.norm {
            let gamma = &self.params[2 * n_layers];
            let (n, e) = g.shape();
            // through tanh
            g.zip_apply(&nc.out, |d, y| *d *= 1.0 - y * y);
            let mut dgamma = Mat::zeros(1, e);
            for j in 0..e {
                dgamma[(0, j)] = g.column(j).dot(&nc.xhat.column(j));
            }
            let dbeta = column_sums(&g);
            let mut dx = Mat::zeros(n, e);
            for i in 0..n {
                let mut mean_d = 0.0;
                let mut mean_dx = 0.0;
                for j in 0..e {
                    let dxh = g[(i, j)] * gamma[(0, j)];
                    mean_d += dxh;
                    mean_dx += dxh * nc.xhat[(i, j)];
                }
                mean_d /= e as f64;
                mean_dx /= e as f64;
                for j in 0..e {
                    let dxh = g[(i, j)] * gamma[(0, j)];
                    dx[(i, j)] = nc.inv_std[i] * (dxh - mean_d - nc.xhat[(i, j)] * mean_dx);
                }
            }
            grads[2 * n_layers] = dgamma;
            grads[2 * n_layers + 1] = dbeta;
            g = dx;
        }
        let act = self.spec.activation;
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                if let Some(m) = &cache.masks[l] {
                    g.component_mul_assign(m);
                }
                let (z, y) = (&cache.pre[l], &cache.post[l]);
                for ((d, &zv), &yv) in g.iter_mut().zip(z.iter()).zip(y.iter()) {
                    *d *= act.derivative(zv, yv);
                }
            }
            grads[2 * l] = t_mul(&cache.inputs[l], &g);
            grads[2 * l + 1] = column_sums(&g);
            g = &g * self.params[2 * l].transpose();
        }
        (grads, g)
    }
}
