//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::excessive_precision)]

use fedoui_core::aggregation::ClientReport;
use fedoui_core::nn::{self, Layer, ModelSpec};
use fedoui_core::oui::OuiValue;
use fedoui_core::params::ModelParams;
use fedoui_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// 15-point Kronrod nodes / weights and the embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, density: f64, depth: u32) -> f64 {
    let (k, err) = gk15(f, a, b);
    // tolerance proportional to the interval length, floored at rounding level
    if err <= density * (b - a) || err <= 256.0 * f64::EPSILON * k.abs() || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, density, depth - 1) + adapt(f, m, b, density, depth - 1)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature with absolute tolerance `tol`,
/// after presplitting `[a, b]` into `pieces` equal parts.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, pieces: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let w = (b - a) / pieces as f64;
    let density = tol / (b - a);
    (0..pieces)
        .map(|i| {
            let lo = a + w * i as f64;
            let hi = if i + 1 == pieces { b } else { lo + w };
            adapt(f, lo, hi, density, 40)
        })
        .sum()
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y
    }
}

/// Log of the integrand of `∫_0^w r^{p−1} (1−r)^{q−1} dr`, in the variable
/// actually integrated: `u = r^p` when `p < 1` (which removes the endpoint
/// singularity), otherwise `r` itself. Untransformed pieces are written
/// relative to the split point `c` so large exponents do not cancel
/// pointwise; `offset` carries the constant part.
fn log_piece(p: f64, q: f64, c: f64, v: f64, offset: f64) -> f64 {
    if p < 1.0 {
        let r = v.powf(1.0 / p);
        (-p.ln() + xlogy(q - 1.0, (-r).ln_1p())) + offset
    } else {
        let rel = xlogy(p - 1.0, ((v - c) / c).ln_1p()) + xlogy(q - 1.0, ((c - v) / (1.0 - c)).ln_1p());
        rel + offset
    }
}

fn piece_limit(p: f64, w: f64) -> f64 {
    if p < 1.0 {
        w.powf(p)
    } else {
        w
    }
}

struct BetaOracle {
    a: f64,
    b: f64,
    split: f64,
    /// Constant added to the untransformed / transformed log integrands.
    offsets: [f64; 2],
    total: f64,
}

impl BetaOracle {
    fn new(a: f64, b: f64) -> Self {
        let split = if a >= 1.0 && b >= 1.0 { a / (a + b) } else { 0.5 };
        // log density kernel at the split point, shared by both pieces
        let anchor = xlogy(a - 1.0, split.ln()) + xlogy(b - 1.0, (-split).ln_1p());
        let mut o = BetaOracle {
            a,
            b,
            split,
            offsets: [anchor, 0.0],
            total: 1.0,
        };
        // rescale so the largest value seen on a dense scan is about 1
        let mut peak = f64::NEG_INFINITY;
        for (p, q, c) in o.pieces() {
            let lim = piece_limit(p, c);
            for i in 0..=4000 {
                let l = o.log_at(p, q, c, lim * i as f64 / 4000.0);
                if l.is_finite() {
                    peak = peak.max(l);
                }
            }
        }
        o.offsets = [anchor - peak, -peak];
        let [(p1, q1, c1), (p2, q2, c2)] = o.pieces();
        let rough = o.piece(p1, q1, c1, c1, 1e-6) + o.piece(p2, q2, c2, c2, 1e-6);
        o.total = o.piece(p1, q1, c1, c1, 1e-15 * rough) + o.piece(p2, q2, c2, c2, 1e-15 * rough);
        o
    }

    /// `(p, q, split in the piece's own coordinate)` for the left and right pieces.
    fn pieces(&self) -> [(f64, f64, f64); 2] {
        [(self.a, self.b, self.split), (self.b, self.a, 1.0 - self.split)]
    }

    fn log_at(&self, p: f64, q: f64, c: f64, v: f64) -> f64 {
        let offset = if p < 1.0 { self.offsets[1] } else { self.offsets[0] };
        log_piece(p, q, c, v, offset)
    }

    fn piece(&self, p: f64, q: f64, c: f64, w: f64, tol: f64) -> f64 {
        let f = move |v: f64| self.log_at(p, q, c, v).exp();
        integrate(&f, 0.0, piece_limit(p, w), tol, 16)
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let tol = 1e-15 * self.total;
        let [(p1, q1, c1), (p2, q2, c2)] = self.pieces();
        if x <= self.split {
            self.piece(p1, q1, c1, x, tol) / self.total
        } else {
            1.0 - self.piece(p2, q2, c2, 1.0 - x, tol) / self.total
        }
    }
}

/// `I_x(a, b)` by quadrature of the Beta density, normalized by quadrature.
pub fn beta_cdf_oracle(x: f64, a: f64, b: f64) -> f64 {
    BetaOracle::new(a, b).cdf(x)
}

/// Same oracle, reusing the normalization across many `x`.
pub fn beta_cdf_oracle_grid(xs: &[f64], a: f64, b: f64) -> Vec<f64> {
    let o = BetaOracle::new(a, b);
    xs.iter().map(|&x| o.cdf(x)).collect()
}

/// (α, β) pairs spanning [1e-3, 1e4], including the reported round fit.
pub const GRID_PAIRS: [(f64, f64); 20] = [
    (1e-3, 1e-3),
    (1e-3, 1e4),
    (1e4, 1e-3),
    (1e4, 1e4),
    (0.5, 0.5),
    (1.0, 1.0),
    (2.0, 3.0),
    (6.10, 15.94),
    (15.94, 6.10),
    (0.1, 5.0),
    (5.0, 0.1),
    (50.0, 50.0),
    (100.0, 2.0),
    (0.01, 1.0),
    (1.0, 0.01),
    (1000.0, 3000.0),
    (3.0, 1000.0),
    (0.3, 1000.0),
    (1000.0, 0.3),
    (20.0, 0.8),
];

pub fn grid_x() -> Vec<f64> {
    (0..50).map(|i| i as f64 / 49.0).collect()
}

/// Central finite difference of `f` along coordinate `i` of `params`.
pub fn central_difference(
    params: &ModelParams,
    layer: usize,
    i: usize,
    h: f64,
    f: &dyn Fn(&ModelParams) -> f64,
) -> f64 {
    let mut plus = params.clone();
    plus.tensor_mut(layer).data_mut()[i] += h;
    let mut minus = params.clone();
    minus.tensor_mut(layer).data_mut()[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn scalar_params(values: &[f64]) -> ModelParams {
    let mut p = ModelParams::new(Vec::new());
    p.push("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
    p
}

pub fn report(id: usize, delta: &[f64], n: usize, oui: f64) -> ClientReport {
    ClientReport {
        client_id: id,
        delta: scalar_params(delta),
        n_samples: n,
        oui: OuiValue::new(oui).unwrap(),
        train_loss: 0.0,
    }
}

pub const STEP: f64 = 1e-5;
pub const MARGIN: f64 = 1e-3;
pub const BATCH: usize = 2;

/// Conv without padding, overlapping pooling, two linear layers.
pub fn overlapping_pool_spec() -> ModelSpec {
    ModelSpec {
        input_shape: vec![2, 5, 5],
        layers: vec![
            Layer::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 2,
                padding: 0,
            },
            Layer::Relu,
            Layer::MaxPool { size: 3, stride: 1 },
            Layer::Flatten,
            Layer::Linear { inputs: 12, outputs: 4 },
            Layer::Relu,
            Layer::Linear { inputs: 4, outputs: 3 },
        ],
        classes: 3,
        tap: 4,
    }
}

pub fn gradient_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::two_block_cnn(2, 4, [3, 4], 5, 3),
        overlapping_pool_spec(),
        ModelSpec::linear(6, 3),
    ]
}

pub fn loss(spec: &ModelSpec, params: &ModelParams, x: &Tensor, y: &[usize]) -> f64 {
    let (logits, _) = nn::forward(spec, params, x).unwrap();
    nn::cross_entropy_loss(&logits, y).unwrap()
}

/// Smallest distance of any ReLU input from zero and of any pooling
/// window's maximum from its runner-up.
pub fn kink_margin(spec: &ModelSpec, cache: &nn::ForwardCache) -> f64 {
    let mut margin = f64::INFINITY;
    for (i, layer) in spec.layers.iter().enumerate() {
        let input = cache.layer_input(i);
        match *layer {
            Layer::Relu => {
                for v in input.data() {
                    margin = margin.min(v.abs());
                }
            }
            Layer::MaxPool { size, stride } => {
                let s = input.shape();
                let (c, h, w) = (s[1], s[2], s[3]);
                for plane in input.data().chunks(h * w).take(s[0] * c) {
                    for oy in 0..(h - size) / stride + 1 {
                        for ox in 0..(w - size) / stride + 1 {
                            let mut vals: Vec<f64> = (0..size * size)
                                .map(|k| plane[(oy * stride + k / size) * w + ox * stride + k % size])
                                .collect();
                            vals.sort_by(|a, b| b.total_cmp(a));
                            margin = margin.min(vals[0] - vals[1]);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    margin
}

/// Draws params, inputs and labels until no nonlinearity sits within
/// `MARGIN` of a kink, so a finite-difference step cannot cross one.
pub fn smooth_instance(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> (ModelParams, Tensor, Vec<usize>) {
    let per_sample: usize = spec.input_shape.iter().product();
    let mut shape = vec![BATCH];
    shape.extend_from_slice(&spec.input_shape);
    for _ in 0..10_000 {
        let params = spec.init_params(rng);
        let data = (0..BATCH * per_sample).map(|_| rng.sample(StandardNormal)).collect();
        let x = Tensor::new(shape.clone(), data).unwrap();
        let y: Vec<usize> = (0..BATCH).map(|_| rng.gen_range(0..spec.classes)).collect();
        let (_, cache) = nn::forward(spec, &params, &x).unwrap();
        if kink_margin(spec, &cache) > MARGIN {
            return (params, x, y);
        }
    }
    panic!("no smooth instance found");
}

/// Largest relative difference between analytic and central-difference
/// gradients over every parameter, with the parameter's location.
pub fn worst_gradient_error(spec: &ModelSpec, params: &ModelParams, x: &Tensor, y: &[usize]) -> (f64, String) {
    let (_, cache) = nn::forward(spec, params, x).unwrap();
    let grads = nn::backward(spec, params, &cache, y).unwrap();
    params.check_compatible(&grads).unwrap();
    let f = |p: &ModelParams| loss(spec, p, x, y);
    let mut worst = (0.0, String::new());
    for (li, layer) in grads.layers().iter().enumerate() {
        for (i, &analytic) in layer.tensor.data().iter().enumerate() {
            let numeric = central_difference(params, li, i, STEP, &f);
            // relative error, floored so vanishing gradients compare absolutely
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}]: analytic {analytic:e}, numeric {numeric:e}", layer.name));
            }
        }
    }
    worst
}
