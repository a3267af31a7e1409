//! Kinematic-topology network.
//!
//! Each joint owns a small encoder. Base-attached joints encode their angle
//! alone; every other joint encodes its angle together with its parent's
//! latent, so information flows from the roots to the leaves along the tree.
//! All latents are concatenated and regressed to a distance by an MLP head
//! with a softplus output.
//!
//! Parameters live in one flat vector, which keeps the optimizer and the
//! checkpoint code independent of the layer structure. Forward and backward
//! passes work on row-major batches and use `matrixmultiply` for the dense
//! products; the summation order depends only on the layer shapes.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::robot::RobotModel;

pub const DEFAULT_LATENT_DIM: usize = 16;
pub const DEFAULT_ENCODER_HIDDEN: [usize; 1] = [32];
pub const DEFAULT_HEAD_HIDDEN: [usize; 2] = [256, 128];

/// Largest batch processed in one pass by the convenience predictors.
const PREDICT_CHUNK: usize = 1024;

/// `1 / sqrt(E[silu(z)^2])` for `z ~ N(0, 1)`: keeps unit activation variance
/// through a SiLU layer. Without it the signal shrinks along deep chains and
/// training stalls at the constant predictor for several epochs.
pub const SILU_GAIN: f64 = 1.6765;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputNonlinearity {
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldArchitecture {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub output_nonlinearity: OutputNonlinearity,
}

impl Default for FieldArchitecture {
    fn default() -> Self {
        FieldArchitecture {
            latent_dim: DEFAULT_LATENT_DIM,
            encoder_hidden: DEFAULT_ENCODER_HIDDEN.to_vec(),
            head_hidden: DEFAULT_HEAD_HIDDEN.to_vec(),
            output_nonlinearity: OutputNonlinearity::Softplus,
        }
    }
}

impl FieldArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.encoder_hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::ArchMismatch("all widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Location of one dense layer inside the flat parameter vector.
/// Weights are row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    robot_name: String,
    arch: FieldArchitecture,
    parents: Vec<Option<usize>>,
    encoders: Vec<Vec<DenseShape>>,
    head: Vec<DenseShape>,
    params: Vec<f64>,
    finite: bool,
}

fn layout(arch: &FieldArchitecture, parents: &[Option<usize>]) -> (Vec<Vec<DenseShape>>, Vec<DenseShape>, usize) {
    let mut offset = 0;
    let mut dense = |inputs: usize, outputs: usize| {
        let weight = offset..offset + inputs * outputs;
        let bias = weight.end..weight.end + outputs;
        offset = bias.end;
        DenseShape { inputs, outputs, weight, bias }
    };
    let latent = arch.latent_dim;
    let mut encoders = Vec::with_capacity(parents.len());
    for parent in parents {
        let mut width = if parent.is_some() { 1 + latent } else { 1 };
        let mut layers = Vec::new();
        for &h in arch.encoder_hidden.iter().chain(std::iter::once(&latent)) {
            layers.push(dense(width, h));
            width = h;
        }
        encoders.push(layers);
    }
    let mut head = Vec::new();
    let mut width = parents.len() * latent;
    for &h in arch.head_hidden.iter().chain(std::iter::once(&1)) {
        head.push(dense(width, h));
        width = h;
    }
    (encoders, head, offset)
}

impl FieldModel {
    /// Fresh model with fan-in scaled uniform weights, `U(±gain·sqrt(3 / fan_in))`,
    /// and zero biases. Layers feeding a SiLU use [`SILU_GAIN`]; the rest use 1.
    pub fn init(robot: &RobotModel, arch: FieldArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let parents = robot.parents();
        if parents.iter().enumerate().any(|(i, p)| p.is_some_and(|p| p >= i)) {
            return Err(Error::ArchMismatch("parent mapping is not topologically ordered".into()));
        }
        let (encoders, head, count) = layout(&arch, &parents);
        let mut params = vec![0.0; count];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gains = encoders
            .iter()
            .chain(std::iter::once(&head))
            .flat_map(|layers| (0..layers.len()).map(move |l| if l + 1 < layers.len() { SILU_GAIN } else { 1.0 }));
        for (shape, gain) in encoders.iter().flatten().chain(&head).zip(gains) {
            let bound = gain * (3.0 / shape.inputs as f64).sqrt();
            for w in &mut params[shape.weight.clone()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(FieldModel { robot_name: robot.name().to_owned(), arch, parents, encoders, head, params, finite: true })
    }

    /// Reassembles a model from stored parts; used by checkpoint loading.
    pub(crate) fn from_parts(
        robot_name: String,
        arch: FieldArchitecture,
        parents: Vec<Option<usize>>,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        if parents.is_empty() || parents.iter().enumerate().any(|(i, p)| p.is_some_and(|p| p >= i)) {
            return Err(Error::ArchMismatch("parent mapping is not topologically ordered".into()));
        }
        let (encoders, head, count) = layout(&arch, &parents);
        check_len(count, params.len())
            .map_err(|_| Error::ArchMismatch(format!("expected {count} parameters, found {}", params.len())))?;
        let finite = params.iter().all(|p| p.is_finite());
        Ok(FieldModel { robot_name, arch, parents, encoders, head, params, finite })
    }

    pub fn robot_name(&self) -> &str {
        &self.robot_name
    }

    pub fn arch(&self) -> &FieldArchitecture {
        &self.arch
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn n_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn head_input_width(&self) -> usize {
        self.head[0].inputs
    }

    pub fn encoder_layers(&self, joint: usize) -> &[DenseShape] {
        &self.encoders[joint]
    }

    pub fn head_layers(&self) -> &[DenseShape] {
        &self.head
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Mutable access to the flat parameters; finiteness is re-checked afterwards.
    pub fn update_parameters<F: FnOnce(&mut [f64])>(&mut self, f: F) {
        f(&mut self.params);
        self.finite = self.params.iter().all(|p| p.is_finite());
    }

    pub fn is_finite(&self) -> bool {
        self.finite
    }

    /// Rejects robots whose name or kinematic tree differ from the model's.
    pub fn ensure_compatible(&self, robot: &RobotModel) -> Result<()> {
        if robot.name() != self.robot_name || robot.parents() != self.parents {
            return Err(Error::RobotMismatch(format!(
                "field was trained for {} ({} joints), robot is {} ({} joints)",
                self.robot_name,
                self.n_joints(),
                robot.name(),
                robot.n_joints()
            )));
        }
        Ok(())
    }

    fn check_ready(&self, values: usize) -> Result<usize> {
        if !self.finite {
            return Err(Error::NonFiniteParameters);
        }
        let k = self.n_joints();
        if !values.is_multiple_of(k) {
            return Err(Error::dims(k, values % k));
        }
        Ok(values / k)
    }

    pub fn predict(&self, q: &[f64]) -> Result<f64> {
        check_len(self.n_joints(), q.len())?;
        Ok(self.predict_batch(q)?[0])
    }

    /// Predictions for row-major queries.
    pub fn predict_batch(&self, queries: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_ready(queries.len())?;
        let k = self.n_joints();
        let mut ws = Workspace::default();
        let mut out = Vec::with_capacity(n);
        for chunk in queries.chunks(PREDICT_CHUNK * k) {
            self.forward(chunk, &mut ws);
            out.extend_from_slice(ws.predictions());
        }
        Ok(out)
    }

    /// Value and exact input gradient by reverse-mode differentiation.
    pub fn value_and_gradient(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(self.n_joints(), q.len())?;
        self.check_ready(q.len())?;
        let mut ws = Workspace::default();
        self.forward(q, &mut ws);
        let value = ws.predictions()[0];
        let mut grad = vec![0.0; q.len()];
        self.backward(q, &[1.0], &mut ws, None, Some(&mut grad));
        Ok((value, grad))
    }

    pub fn input_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(q)?.1)
    }

    /// Batched forward pass; predictions are left in the workspace.
    pub(crate) fn forward(&self, q: &[f64], ws: &mut Workspace) {
        let k = self.n_joints();
        let b = q.len() / k;
        let latent = self.arch.latent_dim;
        let stride = k * latent;
        ws.prepare(self, b);
        let p = &self.params;

        for j in 0..k {
            let layers = &self.encoders[j];
            let last = layers.len() - 1;
            for (l, shape) in layers.iter().enumerate() {
                let pre = &mut ws.enc_pre[j][l];
                let act_all = &mut ws.enc_act[j];
                let w = &p[shape.weight.clone()];
                let bias = &p[shape.bias.clone()];
                let out = shape.outputs;
                if l == 0 {
                    // angle column plus (optionally) the parent's latent block
                    match self.parents[j] {
                        Some(parent) => gemm(
                            (b, latent, out),
                            (&ws.latents, parent * latent, stride, 1),
                            (w, 1, 1, shape.inputs),
                            0.0,
                            (pre, 0, out, 1),
                        ),
                        None => pre.iter_mut().for_each(|x| *x = 0.0),
                    }
                    for s in 0..b {
                        let angle = q[s * k + j];
                        let row = &mut pre[s * out..(s + 1) * out];
                        for o in 0..out {
                            row[o] += angle * w[o * shape.inputs] + bias[o];
                        }
                    }
                } else {
                    let input = &act_all[l - 1];
                    gemm(
                        (b, shape.inputs, out),
                        (input, 0, shape.inputs, 1),
                        (w, 0, 1, shape.inputs),
                        0.0,
                        (pre, 0, out, 1),
                    );
                    add_bias(pre, bias);
                }
                if l == last {
                    for s in 0..b {
                        let dst = &mut ws.latents[s * stride + j * latent..s * stride + (j + 1) * latent];
                        for (d, z) in dst.iter_mut().zip(&pre[s * out..(s + 1) * out]) {
                            *d = z.tanh();
                        }
                    }
                } else {
                    let act = &mut act_all[l];
                    for (a, z) in act.iter_mut().zip(pre.iter()) {
                        *a = silu(*z);
                    }
                }
            }
        }

        for (l, shape) in self.head.iter().enumerate() {
            let w = &p[shape.weight.clone()];
            let bias = &p[shape.bias.clone()];
            let out = shape.outputs;
            let (done, rest) = ws.head_act.split_at_mut(l);
            let input: &[f64] = if l == 0 { &ws.latents } else { &done[l - 1] };
            let pre = &mut ws.head_pre[l];
            gemm((b, shape.inputs, out), (input, 0, shape.inputs, 1), (w, 0, 1, shape.inputs), 0.0, (pre, 0, out, 1));
            add_bias(pre, bias);
            let act = &mut rest[0];
            let f = if l + 1 == self.head.len() { softplus } else { silu };
            for (a, z) in act.iter_mut().zip(pre.iter()) {
                *a = f(*z);
            }
        }
    }

    /// Reverse pass after [`forward`](Self::forward) on the same `q`.
    ///
    /// `dpred` is the upstream derivative per sample. Parameter gradients are
    /// accumulated into `param_grad`; input gradients are written (not
    /// accumulated) into `input_grad`, row-major like `q`.
    pub(crate) fn backward(
        &self,
        q: &[f64],
        dpred: &[f64],
        ws: &mut Workspace,
        mut param_grad: Option<&mut [f64]>,
        mut input_grad: Option<&mut [f64]>,
    ) {
        let k = self.n_joints();
        let b = q.len() / k;
        let latent = self.arch.latent_dim;
        let stride = k * latent;
        let p = &self.params;
        if let Some(g) = input_grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }

        // Head, from the output down to the latent concatenation.
        let n_head = self.head.len();
        for l in (0..n_head).rev() {
            let shape = &self.head[l];
            let out = shape.outputs;
            let dz = &mut ws.dz_head[l];
            if l + 1 == n_head {
                for s in 0..b {
                    dz[s] = dpred[s] * sigmoid(ws.head_pre[l][s]);
                }
            } else {
                let up = &ws.da_head[l];
                for ((d, &u), &z) in dz.iter_mut().zip(up.iter()).zip(&ws.head_pre[l]) {
                    *d = u * silu_grad(z);
                }
            }
            let dz = &ws.dz_head[l];
            let input: &[f64] = if l == 0 { &ws.latents } else { &ws.head_act[l - 1] };
            if let Some(g) = param_grad.as_deref_mut() {
                gemm(
                    (out, b, shape.inputs),
                    (dz, 0, 1, out),
                    (input, 0, shape.inputs, 1),
                    1.0,
                    (g, shape.weight.start, shape.inputs, 1),
                );
                col_sum_into(&mut g[shape.bias.clone()], dz, b);
            }
            let w = &p[shape.weight.clone()];
            let target = if l == 0 { &mut ws.d_latents } else { &mut ws.da_head[l - 1] };
            gemm((b, out, shape.inputs), (dz, 0, out, 1), (w, 0, shape.inputs, 1), 0.0, (target, 0, shape.inputs, 1));
        }

        // Encoders in reverse topological order; children add into their parent's block first.
        for j in (0..k).rev() {
            let layers = &self.encoders[j];
            let last = layers.len() - 1;
            for l in (0..layers.len()).rev() {
                let shape = &layers[l];
                let out = shape.outputs;
                let dz = &mut ws.dz_enc[j][l];
                if l == last {
                    for s in 0..b {
                        let base = s * stride + j * latent;
                        for o in 0..out {
                            let v = ws.latents[base + o];
                            dz[s * out + o] = ws.d_latents[base + o] * (1.0 - v * v);
                        }
                    }
                } else {
                    let up = &ws.da_enc[j][l];
                    for ((d, &u), &z) in dz.iter_mut().zip(up.iter()).zip(&ws.enc_pre[j][l]) {
                        *d = u * silu_grad(z);
                    }
                }
                let dz = &ws.dz_enc[j][l];
                let w = &p[shape.weight.clone()];
                if l > 0 {
                    let input = &ws.enc_act[j][l - 1];
                    if let Some(g) = param_grad.as_deref_mut() {
                        gemm(
                            (out, b, shape.inputs),
                            (dz, 0, 1, out),
                            (input, 0, shape.inputs, 1),
                            1.0,
                            (g, shape.weight.start, shape.inputs, 1),
                        );
                        col_sum_into(&mut g[shape.bias.clone()], dz, b);
                    }
                    let target = &mut ws.da_enc[j][l - 1];
                    gemm(
                        (b, out, shape.inputs),
                        (dz, 0, out, 1),
                        (w, 0, shape.inputs, 1),
                        0.0,
                        (target, 0, shape.inputs, 1),
                    );
                    continue;
                }
                // First layer: column 0 is the joint angle, the rest the parent latent.
                if let Some(g) = param_grad.as_deref_mut() {
                    for s in 0..b {
                        let angle = q[s * k + j];
                        for o in 0..out {
                            g[shape.weight.start + o * shape.inputs] += dz[s * out + o] * angle;
                        }
                    }
                    if let Some(parent) = self.parents[j] {
                        gemm(
                            (out, b, latent),
                            (dz, 0, 1, out),
                            (&ws.latents, parent * latent, stride, 1),
                            1.0,
                            (g, shape.weight.start + 1, shape.inputs, 1),
                        );
                    }
                    col_sum_into(&mut g[shape.bias.clone()], dz, b);
                }
                if let Some(gq) = input_grad.as_deref_mut() {
                    for s in 0..b {
                        let mut acc = 0.0;
                        for o in 0..out {
                            acc += dz[s * out + o] * w[o * shape.inputs];
                        }
                        gq[s * k + j] = acc;
                    }
                }
                if let Some(parent) = self.parents[j] {
                    gemm(
                        (b, out, latent),
                        (dz, 0, out, 1),
                        (w, 1, shape.inputs, 1),
                        1.0,
                        (&mut ws.d_latents, parent * latent, stride, 1),
                    );
                }
            }
        }
    }
}

/// Reusable buffers for one batch size.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    batch: usize,
    enc_pre: Vec<Vec<Vec<f64>>>,
    enc_act: Vec<Vec<Vec<f64>>>,
    latents: Vec<f64>,
    head_pre: Vec<Vec<f64>>,
    head_act: Vec<Vec<f64>>,
    dz_enc: Vec<Vec<Vec<f64>>>,
    da_enc: Vec<Vec<Vec<f64>>>,
    d_latents: Vec<f64>,
    dz_head: Vec<Vec<f64>>,
    da_head: Vec<Vec<f64>>,
}

impl Workspace {
    fn prepare(&mut self, model: &FieldModel, batch: usize) {
        let shaped =
            |layers: &[DenseShape]| -> Vec<Vec<f64>> { layers.iter().map(|s| vec![0.0; batch * s.outputs]).collect() };
        if self.batch == batch && self.enc_pre.len() == model.encoders.len() {
            return;
        }
        self.batch = batch;
        self.enc_pre = model.encoders.iter().map(|e| shaped(e)).collect();
        self.enc_act = self.enc_pre.clone();
        self.dz_enc = self.enc_pre.clone();
        self.da_enc = self.enc_pre.clone();
        self.latents = vec![0.0; batch * model.head_input_width()];
        self.d_latents = self.latents.clone();
        self.head_pre = shaped(&model.head);
        self.head_act = self.head_pre.clone();
        self.dz_head = self.head_pre.clone();
        self.da_head = self.head_pre.clone();
    }

    pub(crate) fn predictions(&self) -> &[f64] {
        self.head_act.last().expect("head has an output layer")
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn add_bias(pre: &mut [f64], bias: &[f64]) {
    for row in pre.chunks_exact_mut(bias.len()) {
        for (x, b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
}

fn col_sum_into(dst: &mut [f64], m: &[f64], rows: usize) {
    let cols = dst.len();
    for r in 0..rows {
        for (d, x) in dst.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *d += x;
        }
    }
}

/// `C = A B + beta C` for strided row/column views.
///
/// Operands are `(slice, offset, row_stride, col_stride)`; dims are `(m, k, n)`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, a_off, rsa, csa): (&[f64], usize, usize, usize),
    (bm, b_off, rsb, csb): (&[f64], usize, usize, usize),
    beta: f64,
    (c, c_off, rsc, csc): (&mut [f64], usize, usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |off: usize, r: usize, rs: usize, cc: usize, cs: usize| off + (r - 1) * rs + (cc - 1) * cs;
    assert!(last(c_off, m, rsc, n, csc) < c.len());
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[c_off + i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(last(a_off, m, rsa, k, csa) < a.len());
    assert!(last(b_off, k, rsb, n, csb) < bm.len());
    // SAFETY: the asserts above bound every element the kernel touches, and
    // `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(a_off),
            rsa as isize,
            csa as isize,
            bm.as_ptr().add(b_off),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}
