//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Ix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spst_core::dtw::Series;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
}

pub fn random_series(rng: &mut impl Rng, len: usize, channels: usize) -> Series {
    let data = (0..len * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Series::new(data, channels).unwrap()
}

fn point_cost(a: &Series, b: &Series, i: usize, j: usize) -> f64 {
    a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum warping cost over every monotone path from `(0,0)` to the last cell,
/// accumulating point costs from the start of the path.
pub fn dtw_by_enumeration(a: &Series, b: &Series) -> f64 {
    fn walk(a: &Series, b: &Series, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + point_cost(a, b, i, j);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn as4(x: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    x.view().into_dimensionality::<Ix4>().unwrap()
}

/// `y[e,o,t,w] = Σ_k Σ_c Σ_v W[k,o,c] · x[e,c,t,v] · G[k,v,w]`.
pub fn spatial_oracle(x: &ArrayD<f64>, w: &Array3<f64>, g: &Array3<f64>) -> Array4<f64> {
    let x = as4(x);
    let (e_n, c_in, t_n, v_n) = x.dim();
    let (k_n, c_out, _) = w.dim();
    let mut y = Array4::zeros((e_n, c_out, t_n, v_n));
    for e in 0..e_n {
        for o in 0..c_out {
            for t in 0..t_n {
                for wj in 0..v_n {
                    let mut s = 0.0;
                    for k in 0..k_n {
                        for c in 0..c_in {
                            for v in 0..v_n {
                                s += w[[k, o, c]] * x[[e, c, t, v]] * g[[k, v, wj]];
                            }
                        }
                    }
                    y[[e, o, t, wj]] = s;
                }
            }
        }
    }
    y
}

/// `y[e,o,t,w] = Σ_c Σ_v M[o,c] · x[e,c,t,v] · As[e/bodies][v,w]`.
pub fn structural_oracle(x: &ArrayD<f64>, m: &Array2<f64>, adj: &Array3<f64>, bodies: usize) -> Array4<f64> {
    let x = as4(x);
    let (e_n, c_in, t_n, v_n) = x.dim();
    let c_out = m.nrows();
    let mut y = Array4::zeros((e_n, c_out, t_n, v_n));
    for e in 0..e_n {
        let n = e / bodies;
        for o in 0..c_out {
            for t in 0..t_n {
                for wj in 0..v_n {
                    let mut s = 0.0;
                    for c in 0..c_in {
                        for v in 0..v_n {
                            s += m[[o, c]] * x[[e, c, t, v]] * adj[[n, v, wj]];
                        }
                    }
                    y[[e, o, t, wj]] = s;
                }
            }
        }
    }
    y
}

/// Zero-padded, strided 1-D convolution along frames, independently per joint.
pub fn temporal_oracle(x: &ArrayD<f64>, w: &Array3<f64>, bias: Option<&Array1<f64>>, stride: usize) -> Array4<f64> {
    let x = as4(x);
    let (e_n, c_in, t_n, v_n) = x.dim();
    let (c_out, _, k_n) = w.dim();
    let pad = (k_n / 2) as isize;
    let t_out = (t_n - 1) / stride + 1;
    let mut y = Array4::zeros((e_n, c_out, t_out, v_n));
    for e in 0..e_n {
        for o in 0..c_out {
            for to in 0..t_out {
                for v in 0..v_n {
                    let mut s = bias.map_or(0.0, |b| b[o]);
                    for c in 0..c_in {
                        for k in 0..k_n {
                            let t = (to * stride) as isize + k as isize - pad;
                            if t >= 0 && (t as usize) < t_n {
                                s += w[[o, c, k]] * x[[e, c, t as usize, v]];
                            }
                        }
                    }
                    y[[e, o, to, v]] = s;
                }
            }
        }
    }
    y
}

/// Per-channel affine normalization with fixed statistics.
pub fn bn_eval_oracle(x: &Array4<f64>, gamma: &Array1<f64>, beta: &Array1<f64>, mean: &Array1<f64>, var: &Array1<f64>, eps: f64) -> Array4<f64> {
    let mut y = x.clone();
    for ((e, c, t, v), out) in y.indexed_iter_mut() {
        *out = gamma[c] * (x[[e, c, t, v]] - mean[c]) / (var[c] + eps).sqrt() + beta[c];
    }
    y
}

/// Per-channel normalization with the biased statistics of `x` over all other axes.
pub fn bn_train_oracle(x: &Array4<f64>, gamma: &Array1<f64>, beta: &Array1<f64>, eps: f64) -> Array4<f64> {
    let (e_n, c_n, t_n, v_n) = x.dim();
    let count = (e_n * t_n * v_n) as f64;
    let mut mean = Array1::zeros(c_n);
    let mut var = Array1::zeros(c_n);
    for ((_, c, _, _), &val) in x.indexed_iter() {
        mean[c] += val / count;
    }
    for ((_, c, _, _), &val) in x.indexed_iter() {
        var[c] += (val - mean[c]) * (val - mean[c]) / count;
    }
    bn_eval_oracle(x, gamma, beta, &mean, &var, eps)
}

pub struct BlockParams {
    pub w: Array3<f64>,
    pub b: Array3<f64>,
    pub m: Option<Array2<f64>>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub tcn_w: Array3<f64>,
    pub tcn_b: Array1<f64>,
    pub stride: usize,
    /// Projection weight `(C_out, C_in, 1)` with its normalization parameters.
    pub projection: Option<(Array3<f64>, [Array1<f64>; 4])>,
    pub identity: bool,
}

/// Eval-mode block: graph convolutions, normalization, ReLU, temporal convolution,
/// then the residual.
pub fn block_oracle(x: &ArrayD<f64>, a_hat: &Array3<f64>, p: &BlockParams, adj: Option<(&Array3<f64>, usize)>, eps: f64) -> Array4<f64> {
    let g = a_hat + &p.b;
    let mut h = spatial_oracle(x, &p.w, &g);
    if let (Some(m), Some((adj, bodies))) = (&p.m, adj) {
        h = h + structural_oracle(x, m, adj, bodies);
    }
    let h = bn_eval_oracle(&h, &p.gamma, &p.beta, &p.mean, &p.var, eps).mapv(|v| v.max(0.0));
    let h = temporal_oracle(&h.into_dyn(), &p.tcn_w, Some(&p.tcn_b), p.stride);
    if p.identity {
        return h + as4(x);
    }
    match &p.projection {
        Some((w, [gamma, beta, mean, var])) => {
            let r = temporal_oracle(x, w, None, p.stride);
            h + bn_eval_oracle(&r, gamma, beta, mean, var, eps)
        }
        None => h,
    }
}

pub fn max_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
