//! Dense feed-forward networks with hand-rolled reverse-mode gradients.
//!
//! Everything here is `f64` on the CPU and deliberately small: batches are
//! row-major matrices, a network is a stack of fully connected layers, and
//! the caller supplies `dL/d(output)` so the same machinery serves every
//! loss in the crate. [`mixed_second_grads`] adds the forward-over-reverse
//! pass needed for gradient-penalty training, where the loss itself contains
//! an input gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Row-major matrix: `rows` samples, each of width `cols`.
///
/// Used for sample batches, activations, and per-sample gradients alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch {
    /// All-zero batch of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Batch {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps a flat row-major buffer; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "batch buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Batch { rows, cols, data })
    }

    /// Builds a batch by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Batch { rows, cols, data }
    }

    /// Number of samples.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Width of each sample.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Borrows sample `r`.
    pub fn row(&self, r: usize) -> &[f64] {
        assert!(r < self.rows, "row {r} out of range ({} rows)", self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutably borrows sample `r`.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        assert!(r < self.rows, "row {r} out of range ({} rows)", self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Iterates over samples as slices.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Flat row-major view of the whole batch.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Vertically stacks `self` on top of `other`; widths must match.
    pub fn vstack(&self, other: &Batch) -> Result<Batch> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack width {} onto width {}",
                other.cols, self.cols
            )));
        }
        let mut data = Vec::with_capacity((self.rows + other.rows) * self.cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Batch {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Pointwise nonlinearity, applied between (and optionally after) layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Pass-through: `f(z) = z`.
    Identity,
    /// `max(0, z)`.
    Relu,
    /// `z` for positive inputs, `0.2 z` otherwise.
    LeakyRelu,
    /// Hyperbolic tangent.
    Tanh,
    /// Logistic function `1 / (1 + exp(-z))`.
    Sigmoid,
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    /// f(z).
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// f'(z), taking the lower branch at relu/leaky-relu kinks.
    pub fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }

    /// f''(z); identically zero for the piecewise-linear activations.
    pub fn second_grad(self, z: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu | Activation::LeakyRelu => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }
}

/// One fully connected layer: `z = W a + b` with `W` stored row-major
/// (`out_dim x in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) w: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
}

impl Layer {
    /// Affine map of a whole batch: returns `rows x out_dim` pre-activations.
    fn affine(&self, input: &Batch) -> Batch {
        let mut out = Batch::zeros(input.rows(), self.out_dim);
        for r in 0..input.rows() {
            let a = input.row(r);
            let z = out.row_mut(r);
            for (o, zo) in z.iter_mut().enumerate() {
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (wi, ai) in wrow.iter().zip(a) {
                    acc += wi * ai;
                }
                *zo = acc;
            }
        }
        out
    }

    /// `delta W` (row per sample of `delta`, transposed product with `a`),
    /// i.e. backprop of the batch through `W`: returns `rows x in_dim`.
    fn backprop_input(&self, delta: &Batch) -> Batch {
        let mut out = Batch::zeros(delta.rows(), self.in_dim);
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let a = out.row_mut(r);
            for (o, doi) in d.iter().enumerate() {
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (ai, wi) in a.iter_mut().zip(wrow) {
                    *ai += doi * wi;
                }
            }
        }
        out
    }
}

/// Fully connected network with a shared hidden activation and a separate
/// output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    hidden: Activation,
    output: Activation,
}

/// Per-layer parameter gradients, shaped exactly like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub(crate) layers: Vec<LayerGrads>,
}

/// Gradient buffers for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub(crate) dw: Vec<f64>,
    pub(crate) db: Vec<f64>,
}

/// Everything `forward_backward` produces in one pass.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    /// Network outputs, `rows x out_dim`.
    pub outputs: Batch,
    /// Parameter gradients summed over the batch.
    pub grads: GradientSet,
    /// Loss gradient with respect to each input row, `rows x in_dim`.
    pub input_grads: Batch,
}

impl MlpNetwork {
    /// Kaiming-initialized network: weights `N(0, sqrt(2 / fan_in))`, zero
    /// biases. `dims` lists layer widths from input to output.
    pub fn kaiming(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "network needs at least an input and an output width".to_owned(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "layer widths must all be positive".to_owned(),
            ));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (in_dim, out_dim) = (win[0], win[1]);
            let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt())
                .expect("std from positive fan-in is finite");
            let w = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
            layers.push(Layer {
                w,
                b: vec![0.0; out_dim],
                in_dim,
                out_dim,
            });
        }
        Ok(MlpNetwork {
            layers,
            hidden,
            output,
        })
    }

    /// Input width.
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Output width.
    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattened copy of all parameters (weights then bias, layer by layer).
    pub fn param_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Overwrites all parameters from a flat vector produced by
    /// [`MlpNetwork::param_vec`].
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} values, network holds {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    /// Clamps every parameter into `[-c, c]` (weight-clipped critics).
    pub fn clamp_params(&mut self, c: f64) {
        assert!(c > 0.0, "clip bound must be positive, got {c}");
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = v.clamp(-c, c);
            }
        }
    }

    fn check_input(&self, input: &Batch) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} does not match network input {}",
                input.cols(),
                self.in_dim()
            )));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("network input".to_owned()));
        }
        Ok(())
    }

    /// Plain forward pass over a batch.
    pub fn forward(&self, input: &Batch) -> Result<Batch> {
        self.check_input(input)?;
        let mut act = input.clone();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&act);
            let f = if li == last { self.output } else { self.hidden };
            for v in z.data.iter_mut() {
                *v = f.apply(*v);
            }
            act = z;
        }
        Ok(act)
    }

    /// Forward pass plus reverse-mode gradients.
    ///
    /// `upstream` is `dL/d(output)` row for row; the returned parameter
    /// gradients are summed over the batch, so any `1/B` factor belongs in
    /// `upstream`.
    pub fn forward_backward(&self, input: &Batch, upstream: &Batch) -> Result<ForwardBackward> {
        self.check_input(input)?;
        if upstream.rows() != input.rows() || upstream.cols() != self.out_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                input.rows(),
                self.out_dim()
            )));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFinite("upstream gradient".to_owned()));
        }

        let last = self.layers.len() - 1;
        // Forward, keeping the input to each layer and its pre-activations.
        let mut acts: Vec<Batch> = vec![input.clone()];
        let mut preacts: Vec<Batch> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&acts[li]);
            let f = if li == last { self.output } else { self.hidden };
            let mut a = z.clone();
            for v in a.data.iter_mut() {
                *v = f.apply(*v);
            }
            preacts.push(z);
            acts.push(a);
        }
        let outputs = acts[self.layers.len()].clone();

        // Backward: delta is dL/dz for the current layer.
        let mut grads = GradientSet::zeros_like(self);
        let mut delta = upstream.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let f = if li == last { self.output } else { self.hidden };
            let z = &preacts[li];
            for (d, zv) in delta.data.iter_mut().zip(z.data.iter()) {
                *d *= f.grad(*zv);
            }
            let lg = &mut grads.layers[li];
            let a_in = &acts[li];
            for r in 0..delta.rows() {
                let drow = delta.row(r);
                let arow = a_in.row(r);
                for (o, doi) in drow.iter().enumerate() {
                    lg.db[o] += doi;
                    let wrow = &mut lg.dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (wi, ai) in wrow.iter_mut().zip(arow) {
                        *wi += doi * ai;
                    }
                }
            }
            delta = layer.backprop_input(&delta);
        }

        Ok(ForwardBackward {
            outputs,
            grads,
            input_grads: delta,
        })
    }
}

impl GradientSet {
    /// Zero gradients shaped like `net`.
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    /// Adds `scale * other` into `self`; shapes must match.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient sets have {} vs {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.dw.len() != b.dw.len() || a.db.len() != b.db.len() {
                return Err(Error::ShapeMismatch(
                    "gradient layer sizes do not match".to_owned(),
                ));
            }
            for (x, y) in a.dw.iter_mut().zip(&b.dw) {
                *x += scale * y;
            }
            for (x, y) in a.db.iter_mut().zip(&b.db) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    /// Multiplies every entry by `scale`.
    pub fn scale(&mut self, scale: f64) {
        for l in &mut self.layers {
            for v in l.dw.iter_mut().chain(l.db.iter_mut()) {
                *v *= scale;
            }
        }
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.dw.iter().chain(l.db.iter()).all(|v| v.is_finite()))
    }

    /// Flattened copy in the same order as [`MlpNetwork::param_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.dw);
            out.extend_from_slice(&l.db);
        }
        out
    }
}

/// First-moment/second-moment style optimizer state bound to one network.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    lr: f64,
    kind: OptKind,
}

#[derive(Debug, Clone)]
enum OptKind {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Option<GradientSet>,
        v: Option<GradientSet>,
    },
}

impl OptimizerState {
    /// Plain stochastic gradient descent.
    pub fn sgd(lr: f64) -> Self {
        OptimizerState {
            lr,
            kind: OptKind::Sgd,
        }
    }

    /// Adam with the usual bias correction.
    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        OptimizerState {
            lr,
            kind: OptKind::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: None,
                v: None,
            },
        }
    }

    /// Drops accumulated moments; the next step behaves like step one.
    ///
    /// Called when a client adopts a swapped-in discriminator, since the old
    /// moments describe a different parameter trajectory.
    pub fn reset(&mut self) {
        if let OptKind::Adam { t, m, v, .. } = &mut self.kind {
            *t = 0;
            *m = None;
            *v = None;
        }
    }

    /// Applies one update step of `grads` to `net`.
    pub fn step(&mut self, net: &mut MlpNetwork, grads: &GradientSet) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.dw.len() != l.w.len() || g.db.len() != l.b.len())
        {
            return Err(Error::ShapeMismatch(
                "gradients do not match network shape".to_owned(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradients".to_owned()));
        }
        let lr = self.lr;
        match &mut self.kind {
            OptKind::Sgd => {
                for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
                    for (w, dw) in l.w.iter_mut().zip(&g.dw) {
                        *w -= lr * dw;
                    }
                    for (b, db) in l.b.iter_mut().zip(&g.db) {
                        *b -= lr * db;
                    }
                }
            }
            OptKind::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                let m = m.get_or_insert_with(|| GradientSet::zeros_like(net));
                let v = v.get_or_insert_with(|| GradientSet::zeros_like(net));
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for ((l, g), (ml, vl)) in net
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(m.layers.iter_mut().zip(v.layers.iter_mut()))
                {
                    let params = l.w.iter_mut().chain(l.b.iter_mut());
                    let gs = g.dw.iter().chain(g.db.iter());
                    let ms = ml.dw.iter_mut().chain(ml.db.iter_mut());
                    let vs = vl.dw.iter_mut().chain(vl.db.iter_mut());
                    for (((p, gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                        *mi = *beta1 * *mi + (1.0 - *beta1) * gi;
                        *vi = *beta2 * *vi + (1.0 - *beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parameter gradient of a directional input derivative.
///
/// For a scalar-output network `f`, computes
/// `sum_k scales[k] * d/d(theta) [ directions[k] . grad_x f(x_k) ]`
/// in one forward-over-reverse sweep. This is the exact second-order term a
/// gradient-penalty loss needs; activation curvature (`f''`) is carried
/// through, so smooth activations are handled correctly and piecewise-linear
/// ones contribute zero curvature.
pub fn mixed_second_grads(
    net: &MlpNetwork,
    inputs: &Batch,
    directions: &Batch,
    scales: &[f64],
) -> Result<GradientSet> {
    if net.out_dim() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "directional second-order pass needs a scalar output, got width {}",
            net.out_dim()
        )));
    }
    net.check_input(inputs)?;
    if directions.rows() != inputs.rows() || directions.cols() != inputs.cols() {
        return Err(Error::ShapeMismatch(format!(
            "directions are {}x{}, expected {}x{}",
            directions.rows(),
            directions.cols(),
            inputs.rows(),
            inputs.cols()
        )));
    }
    if scales.len() != inputs.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} scales for {} samples",
            scales.len(),
            inputs.rows()
        )));
    }
    if !directions.is_finite() || scales.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("penalty directions or scales".to_owned()));
    }

    let last = net.layers.len() - 1;
    // Forward pass carrying a tangent (dotted) value alongside each
    // activation: a_dot tracks d(a)/d(epsilon) for x + epsilon * direction.
    let mut acts: Vec<Batch> = vec![inputs.clone()];
    let mut act_dots: Vec<Batch> = vec![directions.clone()];
    let mut preacts: Vec<Batch> = Vec::with_capacity(net.layers.len());
    let mut pre_dots: Vec<Batch> = Vec::with_capacity(net.layers.len());
    for (li, layer) in net.layers.iter().enumerate() {
        let z = layer.affine(&acts[li]);
        let mut z_dot = layer.affine(&act_dots[li]);
        // affine() adds the bias; the tangent of a constant is zero.
        for r in 0..z_dot.rows() {
            for (o, v) in z_dot.row_mut(r).iter_mut().enumerate() {
                *v -= layer.b[o];
            }
        }
        let f = if li == last { net.output } else { net.hidden };
        let mut a = z.clone();
        let mut a_dot = z_dot.clone();
        for ((av, dv), zv) in a
            .data
            .iter_mut()
            .zip(a_dot.data.iter_mut())
            .zip(z.data.iter())
        {
            *av = f.apply(*zv);
            *dv *= f.grad(*zv);
        }
        preacts.push(z);
        pre_dots.push(z_dot);
        acts.push(a);
        act_dots.push(a_dot);
    }

    // Reverse pass with paired adjoints: zbar for z, dbar for z_dot. The
    // objective is sum_k scales[k] * y_dot_k where y_dot is the directional
    // output derivative computed above.
    let rows = inputs.rows();
    let mut grads = GradientSet::zeros_like(net);
    let fz = net.output;
    let z_last = &preacts[last];
    let zd_last = &pre_dots[last];
    let mut zbar = Batch::zeros(rows, 1);
    let mut dbar = Batch::zeros(rows, 1);
    for r in 0..rows {
        let z = z_last.row(r)[0];
        let zd = zd_last.row(r)[0];
        zbar.row_mut(r)[0] = scales[r] * fz.second_grad(z) * zd;
        dbar.row_mut(r)[0] = scales[r] * fz.grad(z);
    }

    for (li, layer) in net.layers.iter().enumerate().rev() {
        let lg = &mut grads.layers[li];
        let a_in = &acts[li];
        let ad_in = &act_dots[li];
        for r in 0..rows {
            let zb = zbar.row(r);
            let db = dbar.row(r);
            let a = a_in.row(r);
            let ad = ad_in.row(r);
            for o in 0..layer.out_dim {
                lg.db[o] += zb[o];
                let wrow = &mut lg.dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (i, wi) in wrow.iter_mut().enumerate() {
                    *wi += zb[o] * a[i] + db[o] * ad[i];
                }
            }
        }
        if li == 0 {
            break;
        }
        let abar = layer.backprop_input(&zbar);
        let adbar = layer.backprop_input(&dbar);
        let f = net.hidden;
        let z_prev = &preacts[li - 1];
        let zd_prev = &pre_dots[li - 1];
        let width = layer.in_dim;
        let mut zbar_prev = Batch::zeros(rows, width);
        let mut dbar_prev = Batch::zeros(rows, width);
        for r in 0..rows {
            let ab = abar.row(r);
            let adb = adbar.row(r);
            let z = z_prev.row(r);
            let zd = zd_prev.row(r);
            let zb = zbar_prev.row_mut(r);
            for i in 0..width {
                zb[i] = ab[i] * f.grad(z[i]) + adb[i] * f.second_grad(z[i]) * zd[i];
            }
            let dbp = dbar_prev.row_mut(r);
            for i in 0..width {
                dbp[i] = adb[i] * f.grad(z[i]);
            }
        }
        zbar = zbar_prev;
        dbar = dbar_prev;
    }

    Ok(grads)
}
