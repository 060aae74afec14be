//! Single LSTM layer: forward over a sequence with cached activations,
//! and exact backpropagation through time.
//!
//! Batches are column-major: every matrix in a sequence is
//! (features x batch). Gate pre-activations are stacked [i; f; g; o],
//! each `units` rows. Gates i, f, o are sigmoid and the candidate g is
//! tanh; the cell-output activation (h = o * act(c)) is configurable
//! between relu and tanh.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellActivation {
    Relu,
    Tanh,
}

impl CellActivation {
    fn apply(self, c: f64) -> f64 {
        match self {
            CellActivation::Relu => c.max(0.0),
            CellActivation::Tanh => c.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation cell value.
    fn derivative(self, c: f64) -> f64 {
        match self {
            CellActivation::Relu => {
                if c > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CellActivation::Tanh => {
                let t = c.tanh();
                1.0 - t * t
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct LstmLayerParams {
    /// Input kernel, (4 * units) x input_dim.
    pub w_in: DMatrix<f64>,
    /// Recurrent kernel, (4 * units) x units.
    pub w_rec: DMatrix<f64>,
    /// Gate bias, (4 * units) x 1; the forget slice starts at 1.0.
    pub bias: DMatrix<f64>,
    pub units: usize,
    pub activation: CellActivation,
}

impl LstmLayerParams {
    /// Glorot-uniform kernels, zero bias with the forget slice at 1.0.
    pub fn init<R: Rng>(
        input_dim: usize,
        units: usize,
        activation: CellActivation,
        rng: &mut R,
    ) -> Self {
        let rows = 4 * units;
        let lim_in = (6.0 / (input_dim + rows) as f64).sqrt();
        let lim_rec = (6.0 / (units + rows) as f64).sqrt();
        let w_in = DMatrix::from_fn(rows, input_dim, |_, _| rng.random_range(-lim_in..lim_in));
        let w_rec = DMatrix::from_fn(rows, units, |_, _| rng.random_range(-lim_rec..lim_rec));
        let mut bias = DMatrix::zeros(rows, 1);
        for k in units..2 * units {
            bias[(k, 0)] = 1.0;
        }
        Self {
            w_in,
            w_rec,
            bias,
            units,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    /// Runs the layer over `xs` (one (input_dim x batch) matrix per
    /// timestep) from zero initial state.
    pub fn forward(&self, xs: &[DMatrix<f64>]) -> LstmCache {
        let units = self.units;
        let batch = xs.first().map(|x| x.ncols()).unwrap_or(0);
        let mut cache = LstmCache {
            gate_i: Vec::with_capacity(xs.len()),
            gate_f: Vec::with_capacity(xs.len()),
            gate_g: Vec::with_capacity(xs.len()),
            gate_o: Vec::with_capacity(xs.len()),
            cell: Vec::with_capacity(xs.len()),
            act_c: Vec::with_capacity(xs.len()),
            h: Vec::with_capacity(xs.len()),
        };
        let mut h_prev = DMatrix::zeros(units, batch);
        let mut c_prev = DMatrix::zeros(units, batch);
        for x in xs {
            let mut pre = &self.w_in * x + &self.w_rec * &h_prev;
            for col in 0..batch {
                for row in 0..4 * units {
                    pre[(row, col)] += self.bias[(row, 0)];
                }
            }
            let mut i = DMatrix::zeros(units, batch);
            let mut f = DMatrix::zeros(units, batch);
            let mut g = DMatrix::zeros(units, batch);
            let mut o = DMatrix::zeros(units, batch);
            let mut c = DMatrix::zeros(units, batch);
            let mut act_c = DMatrix::zeros(units, batch);
            let mut h = DMatrix::zeros(units, batch);
            for col in 0..batch {
                for row in 0..units {
                    let iv = sigmoid(pre[(row, col)]);
                    let fv = sigmoid(pre[(units + row, col)]);
                    let gv = pre[(2 * units + row, col)].tanh();
                    let ov = sigmoid(pre[(3 * units + row, col)]);
                    let cv = fv * c_prev[(row, col)] + iv * gv;
                    let av = self.activation.apply(cv);
                    i[(row, col)] = iv;
                    f[(row, col)] = fv;
                    g[(row, col)] = gv;
                    o[(row, col)] = ov;
                    c[(row, col)] = cv;
                    act_c[(row, col)] = av;
                    h[(row, col)] = ov * av;
                }
            }
            cache.gate_i.push(i);
            cache.gate_f.push(f);
            cache.gate_g.push(g);
            cache.gate_o.push(o);
            cache.cell.push(c);
            cache.act_c.push(act_c);
            h_prev = h.clone();
            c_prev = cache.cell.last().unwrap().clone();
            cache.h.push(h);
        }
        cache
    }

    /// BPTT given the external gradient on every output h_t; returns the
    /// parameter gradients and the gradient w.r.t. each input x_t.
    pub fn backward(
        &self,
        xs: &[DMatrix<f64>],
        cache: &LstmCache,
        dh_ext: &[DMatrix<f64>],
    ) -> (LstmLayerGrads, Vec<DMatrix<f64>>) {
        let units = self.units;
        let steps = xs.len();
        let batch = xs.first().map(|x| x.ncols()).unwrap_or(0);
        let mut grads = LstmLayerGrads::zeros_like(self);
        let mut dxs = vec![DMatrix::zeros(self.input_dim(), batch); steps];
        let mut dh_next: DMatrix<f64> = DMatrix::zeros(units, batch);
        let mut dc_next: DMatrix<f64> = DMatrix::zeros(units, batch);

        for t in (0..steps).rev() {
            let i = &cache.gate_i[t];
            let f = &cache.gate_f[t];
            let g = &cache.gate_g[t];
            let o = &cache.gate_o[t];
            let c = &cache.cell[t];
            let act_c = &cache.act_c[t];
            let zero;
            let c_prev = if t == 0 {
                zero = DMatrix::zeros(units, batch);
                &zero
            } else {
                &cache.cell[t - 1]
            };

            let mut d_pre = DMatrix::zeros(4 * units, batch);
            let mut dc = DMatrix::zeros(units, batch);
            for col in 0..batch {
                for row in 0..units {
                    let dh = dh_ext[t][(row, col)] + dh_next[(row, col)];
                    let dcv = dh * o[(row, col)] * self.activation.derivative(c[(row, col)])
                        + dc_next[(row, col)];
                    let iv = i[(row, col)];
                    let fv = f[(row, col)];
                    let gv = g[(row, col)];
                    let ov = o[(row, col)];
                    d_pre[(row, col)] = dcv * gv * iv * (1.0 - iv);
                    d_pre[(units + row, col)] = dcv * c_prev[(row, col)] * fv * (1.0 - fv);
                    d_pre[(2 * units + row, col)] = dcv * iv * (1.0 - gv * gv);
                    d_pre[(3 * units + row, col)] = dh * act_c[(row, col)] * ov * (1.0 - ov);
                    dc[(row, col)] = dcv;
                }
            }

            let h_prev_owned;
            let h_prev = if t == 0 {
                h_prev_owned = DMatrix::zeros(units, batch);
                &h_prev_owned
            } else {
                &cache.h[t - 1]
            };
            grads.w_in += &d_pre * xs[t].transpose();
            grads.w_rec += &d_pre * h_prev.transpose();
            for col in 0..batch {
                for row in 0..4 * units {
                    grads.bias[(row, 0)] += d_pre[(row, col)];
                }
            }
            dxs[t] = self.w_in.transpose() * &d_pre;
            dh_next = self.w_rec.transpose() * &d_pre;
            for col in 0..batch {
                for row in 0..units {
                    dc_next[(row, col)] = dc[(row, col)] * f[(row, col)];
                }
            }
        }
        (grads, dxs)
    }
}

/// Activations cached by the forward pass, one entry per timestep.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub gate_i: Vec<DMatrix<f64>>,
    pub gate_f: Vec<DMatrix<f64>>,
    pub gate_g: Vec<DMatrix<f64>>,
    pub gate_o: Vec<DMatrix<f64>>,
    pub cell: Vec<DMatrix<f64>>,
    pub act_c: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct LstmLayerGrads {
    pub w_in: DMatrix<f64>,
    pub w_rec: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl LstmLayerGrads {
    pub fn zeros_like(params: &LstmLayerParams) -> Self {
        Self {
            w_in: DMatrix::zeros(params.w_in.nrows(), params.w_in.ncols()),
            w_rec: DMatrix::zeros(params.w_rec.nrows(), params.w_rec.ncols()),
            bias: DMatrix::zeros(params.bias.nrows(), 1),
        }
    }
}
