//! Small feed-forward network engine: conv / relu / max-pool / flatten /
//! linear layers with hand-written backward passes and SGD with momentum.
//!
//! Batches are row-major tensors whose leading axis is the sample index.
//! Convolutions are lowered to GEMM through an im2col buffer per sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// Stride-1 square convolution with symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        inputs: usize,
        outputs: usize,
    },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "linear",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Linear { .. })
    }
}

/// Architecture description. `tap` is the index of the layer whose output is
/// recorded as the penultimate pre-activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub classes: usize,
    pub tap: usize,
}

impl ModelSpec {
    /// The two-block CNN used for CIFAR-10 experiments; the tap is the
    /// 128-wide hidden linear layer, before its ReLU.
    pub fn cifar_cnn(classes: usize) -> ModelSpec {
        Self::two_block_cnn(3, 32, [32, 64], 128, classes)
    }

    /// Same topology as [`ModelSpec::cifar_cnn`] with configurable sizes.
    /// `side` must be divisible by 4.
    pub fn two_block_cnn(
        channels: usize,
        side: usize,
        filters: [usize; 2],
        hidden: usize,
        classes: usize,
    ) -> ModelSpec {
        let pooled = side / 4;
        ModelSpec {
            input_shape: vec![channels, side, side],
            layers: vec![
                Layer::Conv2d {
                    in_channels: channels,
                    out_channels: filters[0],
                    kernel: 3,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool { size: 2, stride: 2 },
                Layer::Conv2d {
                    in_channels: filters[0],
                    out_channels: filters[1],
                    kernel: 3,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool { size: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear {
                    inputs: filters[1] * pooled * pooled,
                    outputs: hidden,
                },
                Layer::Relu,
                Layer::Linear {
                    inputs: hidden,
                    outputs: classes,
                },
            ],
            classes,
            tap: 7,
        }
    }

    /// Single linear layer mapping flat features to class scores.
    pub fn linear(features: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![features],
            layers: vec![Layer::Linear {
                inputs: features,
                outputs: classes,
            }],
            classes,
            tap: 0,
        }
    }

    pub fn layer_name(&self, i: usize) -> String {
        format!("{}{}", self.layers[i].kind(), i)
    }

    /// Per-sample output shape of every layer, validating that consecutive
    /// layers agree.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        if self.tap >= self.layers.len() {
            return Err(Error::Config(format!(
                "tap index {} out of range for {} layers",
                self.tap,
                self.layers.len()
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let name = self.layer_name(i);
            let mismatch = |expected: Vec<usize>, got: &[usize]| Error::Shape {
                layer: name.clone(),
                expected,
                got: got.to_vec(),
            };
            shape = match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(mismatch(vec![in_channels, 0, 0], &shape));
                    }
                    if shape[1] + 2 * padding < kernel || shape[2] + 2 * padding < kernel {
                        return Err(Error::Config(format!("{name}: kernel larger than input")));
                    }
                    vec![
                        out_channels,
                        shape[1] + 2 * padding - kernel + 1,
                        shape[2] + 2 * padding - kernel + 1,
                    ]
                }
                Layer::Relu => shape,
                Layer::MaxPool { size, stride } => {
                    if shape.len() != 3 || shape[1] < size || shape[2] < size || stride == 0 {
                        return Err(Error::Config(format!(
                            "{name}: cannot pool {shape:?} with window {size}/{stride}"
                        )));
                    }
                    vec![
                        shape[0],
                        (shape[1] - size) / stride + 1,
                        (shape[2] - size) / stride + 1,
                    ]
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Linear { inputs, outputs } => {
                    if shape.len() != 1 || shape[0] != inputs {
                        return Err(mismatch(vec![inputs], &shape));
                    }
                    vec![outputs]
                }
            };
            shapes.push(shape.clone());
        }
        if shape != [self.classes] {
            return Err(Error::Config(format!(
                "final layer produces {shape:?}, expected [{}]",
                self.classes
            )));
        }
        Ok(shapes)
    }

    /// Width `d` of the tapped pre-activation.
    pub fn tap_width(&self) -> Result<usize> {
        Ok(self.output_shapes()?[self.tap].iter().product())
    }

    /// Parameter tensor shapes in the order used by [`ModelParams`].
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let name = self.layer_name(i);
            match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    out.push((
                        format!("{name}.weight"),
                        vec![out_channels, in_channels, kernel, kernel],
                    ));
                    out.push((format!("{name}.bias"), vec![out_channels]));
                }
                Layer::Linear { inputs, outputs } => {
                    out.push((format!("{name}.weight"), vec![outputs, inputs]));
                    out.push((format!("{name}.bias"), vec![outputs]));
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_params(&self) -> ModelParams {
        let mut p = ModelParams::default();
        for (name, shape) in self.param_shapes() {
            p.push(name, Tensor::zeros(&shape));
        }
        p
    }

    /// Uniform initialization in ±sqrt(1/fan_in) for weights and biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let mut p = ModelParams::default();
        for (name, shape) in self.param_shapes() {
            // Weight and bias of a layer share the weight's fan-in.
            let fan_in: usize = if name.ends_with(".weight") {
                shape[1..].iter().product()
            } else {
                let w = p.layers().last().expect("bias follows weight");
                w.tensor.shape()[1..].iter().product()
            };
            let bound = (1.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            p.push(name, Tensor::new(shape, data).expect("shape product"));
        }
        p
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.layers().len() {
            return Err(Error::Config(format!(
                "model expects {} parameter tensors, got {}",
                shapes.len(),
                params.layers().len()
            )));
        }
        for ((name, shape), got) in shapes.iter().zip(params.layers()) {
            if *name != got.name || shape.as_slice() != got.tensor.shape() {
                return Err(Error::Shape {
                    layer: name.clone(),
                    expected: shape.clone(),
                    got: got.tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Intermediate values kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input batch of every layer.
    inputs: Vec<Tensor>,
    /// im2col buffers per conv layer, one per sample.
    cols: Vec<Vec<Vec<f64>>>,
    /// Flat argmax positions per max-pool layer.
    argmax: Vec<Vec<usize>>,
    logits: Tensor,
    penultimate: Tensor,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    /// Tapped pre-activation as a `batch × d` matrix.
    pub fn penultimate(&self) -> &Tensor {
        &self.penultimate
    }

    /// Input that was fed to layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }
}

/// `c = a · b + beta · c` with explicit row/column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays in
    // bounds for the dense row-major or transposed layouts used here.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (k, p) = (self.kernel, self.padding as isize);
        let cols = self.col_cols();
        for c in 0..self.channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut col[((c * k + ki) * k + kj) * cols..][..cols];
                    for oy in 0..self.out_h {
                        let iy = oy as isize + ki as isize - p;
                        let dst = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..][..self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize + kj as isize - p;
                            *d = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f64], dx: &mut [f64]) {
        let (k, p) = (self.kernel, self.padding as isize);
        let cols = self.col_cols();
        for c in 0..self.channels {
            let plane = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &col[((c * k + ki) * k + kj) * cols..][..cols];
                    for oy in 0..self.out_h {
                        let iy = oy as isize + ki as isize - p;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..][..self.width];
                        for ox in 0..self.out_w {
                            let ix = ox as isize + kj as isize - p;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += row[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(layer: &Layer, in_shape: &[usize]) -> ConvGeom {
    let Layer::Conv2d {
        kernel, padding, ..
    } = *layer
    else {
        unreachable!("conv_geom on non-conv layer")
    };
    ConvGeom {
        channels: in_shape[0],
        height: in_shape[1],
        width: in_shape[2],
        kernel,
        padding,
        out_h: in_shape[1] + 2 * padding - kernel + 1,
        out_w: in_shape[2] + 2 * padding - kernel + 1,
    }
}

/// Index of the first parameter tensor of each layer (weights, then bias).
fn param_offsets(spec: &ModelSpec) -> Vec<usize> {
    let mut next = 0;
    spec.layers
        .iter()
        .map(|l| {
            let at = next;
            if l.has_params() {
                next += 2;
            }
            at
        })
        .collect()
}

fn check_batch(spec: &ModelSpec, batch: &Tensor) -> Result<()> {
    if batch.shape().len() != spec.input_shape.len() + 1
        || batch.shape()[1..] != spec.input_shape[..]
    {
        let mut expected = vec![batch.rows()];
        expected.extend_from_slice(&spec.input_shape);
        return Err(Error::Shape {
            layer: "input".into(),
            expected,
            got: batch.shape().to_vec(),
        });
    }
    Ok(())
}

fn run_forward(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Tensor,
    keep: bool,
) -> Result<(Tensor, Tensor, Option<ForwardCache>)> {
    let shapes = spec.output_shapes()?;
    spec.check_params(params)?;
    check_batch(spec, batch)?;

    let b = batch.rows();
    let offsets = param_offsets(spec);
    let mut inputs = Vec::new();
    let mut cols_cache = Vec::new();
    let mut argmax_cache = Vec::new();
    let mut penultimate = None;
    let mut x = batch.clone();
    let mut in_shape = spec.input_shape.clone();

    for (i, layer) in spec.layers.iter().enumerate() {
        let out_shape = &shapes[i];
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![0.0; b * out_len];
        let mut layer_cols = Vec::new();
        let mut layer_argmax = Vec::new();
        match *layer {
            Layer::Conv2d { out_channels, .. } => {
                let g = conv_geom(layer, &in_shape);
                let w = params.tensor(offsets[i]).data();
                let bias = params.tensor(offsets[i] + 1).data();
                let (rows, ncols) = (g.col_rows(), g.col_cols());
                let in_len = x.row_len();
                for s in 0..b {
                    let mut col = vec![0.0; rows * ncols];
                    g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut col);
                    let dst = &mut out[s * out_len..(s + 1) * out_len];
                    for (o, chunk) in dst.chunks_mut(ncols).enumerate() {
                        chunk.fill(bias[o]);
                    }
                    gemm(
                        out_channels,
                        rows,
                        ncols,
                        w,
                        (rows as isize, 1),
                        &col,
                        (ncols as isize, 1),
                        1.0,
                        dst,
                    );
                    if keep {
                        layer_cols.push(col);
                    }
                }
            }
            Layer::Relu => {
                for (o, v) in out.iter_mut().zip(x.data()) {
                    *o = if *v > 0.0 { *v } else { 0.0 };
                }
            }
            Layer::MaxPool { size, stride } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                if keep {
                    layer_argmax = vec![0; b * out_len];
                }
                for s in 0..b {
                    let src = &x.data()[s * c * h * w..(s + 1) * c * h * w];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut arg = 0;
                                for ki in 0..size {
                                    for kj in 0..size {
                                        let idx = (ch * h + oy * stride + ki) * w + ox * stride + kj;
                                        // strict: first maximum in row-major order wins
                                        if src[idx] > best {
                                            best = src[idx];
                                            arg = idx;
                                        }
                                    }
                                }
                                let o = s * out_len + (ch * oh + oy) * ow + ox;
                                out[o] = best;
                                if keep {
                                    layer_argmax[o] = arg;
                                }
                            }
                        }
                    }
                }
            }
            Layer::Flatten => out.copy_from_slice(x.data()),
            Layer::Linear { inputs, outputs } => {
                let w = params.tensor(offsets[i]).data();
                let bias = params.tensor(offsets[i] + 1).data();
                for row in out.chunks_mut(outputs) {
                    row.copy_from_slice(bias);
                }
                gemm(
                    b,
                    inputs,
                    outputs,
                    x.data(),
                    (inputs as isize, 1),
                    w,
                    (1, inputs as isize),
                    1.0,
                    &mut out,
                );
            }
        }
        let mut full_shape = vec![b];
        full_shape.extend_from_slice(out_shape);
        let y = Tensor::new(full_shape, out)?;
        if i == spec.tap {
            penultimate = Some(y.clone().reshape(vec![b, out_len])?);
        }
        if keep {
            inputs.push(std::mem::replace(&mut x, y));
            cols_cache.push(layer_cols);
            argmax_cache.push(layer_argmax);
        } else {
            x = y;
        }
        in_shape = out_shape.clone();
    }

    let penultimate = penultimate.expect("tap validated");
    let cache = keep.then(|| ForwardCache {
        inputs,
        cols: cols_cache,
        argmax: argmax_cache,
        logits: x.clone(),
        penultimate: penultimate.clone(),
    });
    Ok((x, penultimate, cache))
}

/// Forward pass keeping everything needed for [`backward`].
pub fn forward(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    let (logits, _, cache) = run_forward(spec, params, batch, true)?;
    Ok((logits, cache.expect("cache kept")))
}

/// Forward pass without backward caches. Returns logits and the tapped
/// pre-activation.
pub fn infer(spec: &ModelSpec, params: &ModelParams, batch: &Tensor) -> Result<(Tensor, Tensor)> {
    let (logits, penultimate, _) = run_forward(spec, params, batch, false)?;
    Ok((logits, penultimate))
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Input(format!(
            "{} labels for a batch of {rows}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Mean cross-entropy of softmax(logits) against integer labels.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = (logits.rows(), logits.row_len());
    check_labels(labels, b, k)?;
    if b == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let total: f64 = (0..b)
        .map(|s| {
            let row = logits.row(s);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[labels[s]]
        })
        .sum();
    Ok(total / b as f64)
}

/// Gradient of the mean cross-entropy with respect to every parameter.
pub fn backward(
    spec: &ModelSpec,
    params: &ModelParams,
    cache: &ForwardCache,
    labels: &[usize],
) -> Result<ModelParams> {
    let shapes = spec.output_shapes()?;
    spec.check_params(params)?;
    let logits = &cache.logits;
    let b = logits.rows();
    if cache.inputs.len() != spec.layers.len()
        || logits.row_len() != spec.classes
        || cache.inputs[0].shape()[1..] != spec.input_shape[..]
    {
        return Err(Error::Internal(
            "forward cache does not match the model spec".into(),
        ));
    }
    for (i, inp) in cache.inputs.iter().enumerate() {
        let expected: usize = if i == 0 {
            spec.input_shape.iter().product()
        } else {
            shapes[i - 1].iter().product()
        };
        if inp.rows() != b || inp.row_len() != expected {
            return Err(Error::Internal(format!(
                "stale forward cache at {}",
                spec.layer_name(i)
            )));
        }
    }
    check_labels(labels, b, spec.classes)?;

    // d(mean CE)/d logits = (softmax - onehot) / B
    let k = spec.classes;
    let mut grad = vec![0.0; b * k];
    for s in 0..b {
        let row = logits.row(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..k {
            let target = if j == labels[s] { 1.0 } else { 0.0 };
            grad[s * k + j] = (exps[j] / z - target) / b as f64;
        }
    }

    let offsets = param_offsets(spec);
    let mut grads = spec.zero_params();
    for i in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[i];
        let x = &cache.inputs[i];
        let in_len = x.row_len();
        let out_len: usize = shapes[i].iter().product();
        let need_dx = i > 0;
        let mut dx = if need_dx { vec![0.0; b * in_len] } else { Vec::new() };
        match *layer {
            Layer::Conv2d { out_channels, .. } => {
                let in_shape = &x.shape()[1..];
                let g = conv_geom(layer, in_shape);
                let (rows, ncols) = (g.col_rows(), g.col_cols());
                let w = params.tensor(offsets[i]).data();
                let mut dw = vec![0.0; out_channels * rows];
                let mut db = vec![0.0; out_channels];
                let mut dcol = vec![0.0; rows * ncols];
                for s in 0..b {
                    let dout = &grad[s * out_len..(s + 1) * out_len];
                    let col = &cache.cols[i][s];
                    gemm(
                        out_channels,
                        ncols,
                        rows,
                        dout,
                        (ncols as isize, 1),
                        col,
                        (1, ncols as isize),
                        1.0,
                        &mut dw,
                    );
                    for (o, chunk) in dout.chunks(ncols).enumerate() {
                        db[o] += chunk.iter().sum::<f64>();
                    }
                    if need_dx {
                        gemm(
                            rows,
                            out_channels,
                            ncols,
                            w,
                            (1, rows as isize),
                            dout,
                            (ncols as isize, 1),
                            0.0,
                            &mut dcol,
                        );
                        g.col2im_add(&dcol, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                grads.tensor_mut(offsets[i]).data_mut().copy_from_slice(&dw);
                grads.tensor_mut(offsets[i] + 1).data_mut().copy_from_slice(&db);
            }
            Layer::Relu => {
                if need_dx {
                    for ((d, g), v) in dx.iter_mut().zip(&grad).zip(x.data()) {
                        *d = if *v > 0.0 { *g } else { 0.0 };
                    }
                }
            }
            Layer::MaxPool { .. } => {
                if need_dx {
                    let argmax = &cache.argmax[i];
                    for s in 0..b {
                        let dst = &mut dx[s * in_len..(s + 1) * in_len];
                        for o in 0..out_len {
                            dst[argmax[s * out_len + o]] += grad[s * out_len + o];
                        }
                    }
                }
            }
            Layer::Flatten => {
                if need_dx {
                    dx.copy_from_slice(&grad);
                }
            }
            Layer::Linear { inputs, outputs } => {
                let w = params.tensor(offsets[i]).data();
                let dw = grads.tensor_mut(offsets[i]).data_mut();
                gemm(
                    outputs,
                    b,
                    inputs,
                    &grad,
                    (1, outputs as isize),
                    x.data(),
                    (inputs as isize, 1),
                    0.0,
                    dw,
                );
                let db = grads.tensor_mut(offsets[i] + 1).data_mut();
                for row in grad.chunks(outputs) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                if need_dx {
                    gemm(
                        b,
                        outputs,
                        inputs,
                        &grad,
                        (outputs as isize, 1),
                        w,
                        (inputs as isize, 1),
                        0.0,
                        &mut dx,
                    );
                }
            }
        }
        grad = dx;
    }
    Ok(grads)
}

/// One heavy-ball step: `v ← momentum·v + g`, then `p ← p − lr·v`.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    gradients: &ModelParams,
    velocity: &mut ModelParams,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    params.check_compatible(gradients)?;
    params.check_compatible(velocity)?;
    for ((p, g), v) in params
        .layers_mut()
        .iter_mut()
        .zip(gradients.layers())
        .zip(velocity.layers_mut().iter_mut())
    {
        for ((pv, gv), vv) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(g.tensor.data())
            .zip(v.tensor.data_mut().iter_mut())
        {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Index of the largest logit per row (first one on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|s| {
            let row = logits.row(s);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
