//! Oracles and generators shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use hrel::linalg::{gaussian_gram, normalize_gram, DenseMatrix};
use hrel::nnet::{
    layer_backward, layer_forward, softmax_cross_entropy, Conv2d, Layer, Linear, Tensor4,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random sample set: `s` points in `dim` dimensions with a random spread,
/// sometimes with a duplicated point.
pub fn samples(rng: &mut ChaCha8Rng, s: usize, dim: usize) -> Vec<Vec<f64>> {
    let spread = rng.random_range(0.05..5.0);
    let mut pts: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            (0..dim)
                .map(|_| rng.random_range(-spread..spread))
                .collect()
        })
        .collect();
    if rng.random_bool(0.2) {
        let src = rng.random_range(0..s);
        let dst = rng.random_range(0..s);
        pts[dst] = pts[src].clone();
    }
    pts
}

pub fn normalized(pts: &[Vec<f64>], sigma: f64) -> DenseMatrix {
    normalize_gram(&gaussian_gram(pts, sigma).unwrap()).unwrap()
}

pub fn entropy_of(values: &[f64]) -> f64 {
    values
        .iter()
        .filter(|&&l| l > 1e-12)
        .map(|&l| -l * l.log2())
        .sum()
}

/// Roots of the characteristic polynomial of a symmetric 2x2 matrix.
pub fn eig2(m: &DenseMatrix) -> Vec<f64> {
    let (a, b, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 1));
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
    vec![mean + r, mean - r]
}

/// Roots of the characteristic polynomial of a symmetric 3x3 matrix via the
/// trigonometric form of the depressed cubic.
pub fn eig3(m: &DenseMatrix) -> Vec<f64> {
    let a = |i, j| m.get(i, j);
    let p1 = a(0, 1).powi(2) + a(0, 2).powi(2) + a(1, 2).powi(2);
    let q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
    let p2 = (a(0, 0) - q).powi(2) + (a(1, 1) - q).powi(2) + (a(2, 2) - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p < 1e-300 {
        return vec![q; 3];
    }
    let b = |i, j| (a(i, j) - if i == j { q } else { 0.0 }) / p;
    let det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
        - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    vec![l1, 3.0 * q - l1 - l3, l3]
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Linear,
    Relu,
    MaxPool,
    SoftmaxCe,
}

pub const LAYER_KINDS: [LayerKind; 5] = [
    LayerKind::Conv,
    LayerKind::Linear,
    LayerKind::Relu,
    LayerKind::MaxPool,
    LayerKind::SoftmaxCe,
];

/// `sum(g * layer(x))`, whose gradient is what `layer_backward(g)` returns.
fn probe_loss(layer: &Layer, x: &Tensor4, g: &[f64]) -> f64 {
    let (y, _) = layer_forward(layer, x.clone(), false).unwrap();
    y.data().iter().zip(g).map(|(a, b)| a * b).sum()
}

fn central<F: Fn(f64) -> f64>(f: F) -> f64 {
    (f(GRAD_STEP) - f(-GRAD_STEP)) / (2.0 * GRAD_STEP)
}

fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn random_case(kind: LayerKind, rng: &mut ChaCha8Rng) -> (Layer, Tensor4) {
    match kind {
        LayerKind::Conv => {
            let cin = rng.random_range(1..=3);
            let cout = rng.random_range(1..=4);
            let k = rng.random_range(1..=3);
            let h = rng.random_range(k..=k + 3);
            let w = rng.random_range(k..=k + 3);
            let b = rng.random_range(1..=2);
            let mut conv = Conv2d::zeros(cin, cout, k);
            conv.weight = uniform(rng, conv.weight.len());
            conv.bias = uniform(rng, cout);
            (
                Layer::Conv(conv),
                Tensor4::new(b, cin, h, w, uniform(rng, b * cin * h * w)).unwrap(),
            )
        }
        LayerKind::Linear => {
            let fin = rng.random_range(1..=12);
            let fout = rng.random_range(1..=6);
            let b = rng.random_range(1..=4);
            let mut lin = Linear::zeros(fin, fout);
            lin.weight = uniform(rng, fin * fout);
            lin.bias = uniform(rng, fout);
            (
                Layer::Linear(lin),
                Tensor4::new(b, fin, 1, 1, uniform(rng, b * fin)).unwrap(),
            )
        }
        LayerKind::Relu => {
            let d = [
                rng.random_range(1..=3),
                rng.random_range(1..=3),
                rng.random_range(1..=5),
                rng.random_range(1..=5),
            ];
            let n = d.iter().product();
            (
                Layer::Relu,
                Tensor4::new(d[0], d[1], d[2], d[3], away_from_zero(rng, n)).unwrap(),
            )
        }
        LayerKind::MaxPool => {
            let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
            let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
            // Distinct values on a coarse lattice so no window has a near tie.
            let mut values: Vec<f64> = (0..b * c * h * w).map(|i| i as f64 * 0.01).collect();
            for i in (1..values.len()).rev() {
                values.swap(i, rng.random_range(0..=i));
            }
            (
                Layer::MaxPool { size: 2, stride: 2 },
                Tensor4::new(b, c, h, w, values).unwrap(),
            )
        }
        LayerKind::SoftmaxCe => unreachable!(),
    }
}

/// Worst relative error between analytic and central-difference gradients
/// (input, weights and biases) over one seeded random case.
pub fn gradient_case(kind: LayerKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if kind == LayerKind::SoftmaxCe {
        let classes = rng.random_range(2..=10);
        let batch = rng.random_range(1..=5);
        let logits: Vec<f64> = (0..batch * classes)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels, classes);
        let numeric: Vec<f64> = (0..logits.len())
            .map(|i| {
                central(|d| {
                    let mut p = logits.clone();
                    p[i] += d;
                    softmax_cross_entropy(&p, &labels, classes).0
                })
            })
            .collect();
        return rel_err(&grad, &numeric);
    }

    let (layer, x) = random_case(kind, &mut rng);
    let (y, cache) = layer_forward(&layer, x.clone(), true).unwrap();
    let g = uniform(&mut rng, y.data().len());
    let [n, c, h, w] = y.dims();
    let grad_out = Tensor4::new(n, c, h, w, g.clone()).unwrap();
    let (gx, pg) = layer_backward(&layer, cache.as_ref().unwrap(), &grad_out).unwrap();

    let numeric_x: Vec<f64> = (0..x.data().len())
        .map(|i| {
            central(|d| {
                let mut p = x.clone();
                p.data_mut()[i] += d;
                probe_loss(&layer, &p, &g)
            })
        })
        .collect();
    let mut worst = rel_err(gx.data(), &numeric_x);

    if let Some(pg) = pg {
        let perturb = |bias: bool, i: usize, d: f64| {
            let mut l = layer.clone();
            match &mut l {
                Layer::Conv(c) if bias => c.bias[i] += d,
                Layer::Conv(c) => c.weight[i] += d,
                Layer::Linear(c) if bias => c.bias[i] += d,
                Layer::Linear(c) => c.weight[i] += d,
                _ => unreachable!(),
            }
            probe_loss(&l, &x, &g)
        };
        let nw: Vec<f64> = (0..pg.weight.len())
            .map(|i| central(|d| perturb(false, i, d)))
            .collect();
        let nb: Vec<f64> = (0..pg.bias.len())
            .map(|i| central(|d| perturb(true, i, d)))
            .collect();
        worst = worst
            .max(rel_err(&pg.weight, &nw))
            .max(rel_err(&pg.bias, &nb));
    }
    worst
}

pub const SEP_SAMPLES: usize = 100;
pub const SEP_CLASSES: usize = 10;
pub const SEP_FILTERS: usize = 8;
pub const SEP_MAP: usize = 16;

/// Channel 0 of every sample is a fixed random map per class; the other
/// channels are standard normal noise. Shape `100 x 8 x 4 x 4`.
pub fn informative_and_noise(seed: u64) -> (Tensor4, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..SEP_SAMPLES)
        .map(|_| rng.random_range(0..SEP_CLASSES))
        .collect();
    let class_maps: Vec<Vec<f64>> = (0..SEP_CLASSES)
        .map(|_| {
            (0..SEP_MAP)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(SEP_SAMPLES * SEP_FILTERS * SEP_MAP);
    for &y in &labels {
        data.extend_from_slice(&class_maps[y]);
        for _ in SEP_MAP..SEP_FILTERS * SEP_MAP {
            data.push(StandardNormal.sample(&mut rng));
        }
    }
    (
        Tensor4::new(SEP_SAMPLES, SEP_FILTERS, 4, 4, data).unwrap(),
        labels,
    )
}

/// Layer width used for the separability check: the typical distance
/// between two independent standard normal maps.
pub fn separability_sigma() -> f64 {
    (2.0 * SEP_MAP as f64).sqrt()
}
