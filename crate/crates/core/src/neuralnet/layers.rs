use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer, `y = act(x W^T + b)` on row batches.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Uniform bound for fan-in scaled initialisation.
pub fn init_limit(fan_in: usize, activation: Activation) -> f64 {
    let gain = match activation {
        Activation::Relu => 6.0,
        Activation::Identity => 3.0,
    };
    (gain / fan_in.max(1) as f64).sqrt()
}

pub(crate) fn uniform_matrix<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn random<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: uniform_matrix(outputs, inputs, init_limit(inputs, activation), rng),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        general_mat_mul(1.0, &x, &self.weight.t(), 0.0, &mut y);
        y += &self.bias;
        if self.activation == Activation::Relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    ///
    /// `y` is the layer output from the forward pass (only needed for the
    /// rectifier), `dy` the gradient with respect to it.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        y: Option<ArrayView2<'_, f64>>,
        mut dy: Array2<f64>,
        grad: &mut DenseLayer,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        if self.activation == Activation::Relu {
            let y = y.expect("rectifier backward needs the forward output");
            dy.zip_mut_with(&y, |d, &out| {
                if out <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        need_input_grad.then(|| dy.dot(&self.weight))
    }
}

/// Gated recurrent cell:
///
/// ```text
/// r  = sigmoid(x W_r^T + h U_r^T + b_r)
/// z  = sigmoid(x W_z^T + h U_z^T + b_z)
/// n  = tanh(x W_n^T + (r * h) U_n^T + b_n)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCell {
    pub w_r: Array2<f64>,
    pub w_z: Array2<f64>,
    pub w_n: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_n: Array2<f64>,
    pub b_r: Array1<f64>,
    pub b_z: Array1<f64>,
    pub b_n: Array1<f64>,
}

/// Intermediate values of one cell step.
#[derive(Debug, Clone)]
pub struct CellTrace {
    pub h_prev: Array2<f64>,
    pub r: Array2<f64>,
    pub z: Array2<f64>,
    pub n: Array2<f64>,
    pub rh: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl RecurrentCell {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        let wi = || Array2::zeros((hidden, inputs));
        let wh = || Array2::zeros((hidden, hidden));
        Self {
            w_r: wi(),
            w_z: wi(),
            w_n: wi(),
            u_r: wh(),
            u_z: wh(),
            u_n: wh(),
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b_n: Array1::zeros(hidden),
        }
    }

    pub fn random<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let li = init_limit(inputs, Activation::Identity);
        let lh = init_limit(hidden, Activation::Identity);
        Self {
            w_r: uniform_matrix(hidden, inputs, li, rng),
            w_z: uniform_matrix(hidden, inputs, li, rng),
            w_n: uniform_matrix(hidden, inputs, li, rng),
            u_r: uniform_matrix(hidden, hidden, lh, rng),
            u_z: uniform_matrix(hidden, hidden, lh, rng),
            u_n: uniform_matrix(hidden, hidden, lh, rng),
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b_n: Array1::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_r.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.w_r.ncols()
    }

    fn affine(x: ArrayView2<'_, f64>, w: &Array2<f64>, h: ArrayView2<'_, f64>, u: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), w.nrows()));
        general_mat_mul(1.0, &x, &w.t(), 0.0, &mut out);
        general_mat_mul(1.0, &h, &u.t(), 1.0, &mut out);
        out += b;
        out
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>) -> (Array2<f64>, CellTrace) {
        let mut r = Self::affine(x, &self.w_r, h, &self.u_r, &self.b_r);
        r.mapv_inplace(sigmoid);
        let mut z = Self::affine(x, &self.w_z, h, &self.u_z, &self.b_z);
        z.mapv_inplace(sigmoid);
        let rh = &r * &h;
        let mut n = Self::affine(x, &self.w_n, rh.view(), &self.u_n, &self.b_n);
        n.mapv_inplace(f64::tanh);
        let mut h_new = n.clone();
        ndarray::Zip::from(&mut h_new)
            .and(&z)
            .and(&h)
            .for_each(|out, &zv, &hv| *out = (1.0 - zv) * *out + zv * hv);
        let trace = CellTrace {
            h_prev: h.to_owned(),
            r,
            z,
            n,
            rh,
        };
        (h_new, trace)
    }

    /// Backpropagates `dh` (gradient w.r.t. the new hidden state). Returns
    /// `(dL/dx, dL/dh_prev)`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        trace: &CellTrace,
        dh: &Array2<f64>,
        grad: &mut RecurrentCell,
    ) -> (Array2<f64>, Array2<f64>) {
        let CellTrace { h_prev, r, z, n, rh } = trace;
        // Through h' = (1 - z) n + z h.
        let mut dn_pre = Array2::zeros(dh.raw_dim());
        let mut dz_pre = Array2::zeros(dh.raw_dim());
        let mut dh_prev = dh * z;
        ndarray::Zip::from(&mut dn_pre)
            .and(&mut dz_pre)
            .and(dh)
            .and(z)
            .and(n)
            .and(h_prev)
            .for_each(|dnp, dzp, &d, &zv, &nv, &hv| {
                *dnp = d * (1.0 - zv) * (1.0 - nv * nv);
                *dzp = d * (hv - nv) * zv * (1.0 - zv);
            });

        // Candidate gate.
        general_mat_mul(1.0, &dn_pre.t(), &x, 1.0, &mut grad.w_n);
        general_mat_mul(1.0, &dn_pre.t(), rh, 1.0, &mut grad.u_n);
        grad.b_n += &dn_pre.sum_axis(Axis(0));
        let drh = dn_pre.dot(&self.u_n);
        let mut dr_pre = Array2::zeros(dh.raw_dim());
        ndarray::Zip::from(&mut dr_pre)
            .and(&mut dh_prev)
            .and(&drh)
            .and(r)
            .and(h_prev)
            .for_each(|drp, dhp, &d, &rv, &hv| {
                *drp = d * hv * rv * (1.0 - rv);
                *dhp += d * rv;
            });
        let mut dx = dn_pre.dot(&self.w_n);

        // Update and reset gates.
        for (dpre, w, u, gw, gu, gb) in [
            (&dz_pre, &self.w_z, &self.u_z, &mut grad.w_z, &mut grad.u_z, &mut grad.b_z),
            (&dr_pre, &self.w_r, &self.u_r, &mut grad.w_r, &mut grad.u_r, &mut grad.b_r),
        ] {
            general_mat_mul(1.0, &dpre.t(), &x, 1.0, gw);
            general_mat_mul(1.0, &dpre.t(), h_prev, 1.0, gu);
            *gb += &dpre.sum_axis(Axis(0));
            general_mat_mul(1.0, dpre, w, 1.0, &mut dx);
            general_mat_mul(1.0, dpre, u, 1.0, &mut dh_prev);
        }
        (dx, dh_prev)
    }
}
