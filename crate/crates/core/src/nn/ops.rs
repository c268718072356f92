//! Differentiable operations recorded on a [`Tape`].
//!
//! Activations use the layout `(E, C, T, V)` with one entry per (sample, body) pair,
//! entries of a sample adjacent, so entry `e` belongs to sample `e / bodies`.

use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array3, ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use rand::Rng;

use super::tape::{Tape, Var};
use crate::{Error, Result};

fn flat(a: &ArrayD<f64>) -> &[f64] {
    a.as_slice().expect("tape values are contiguous")
}

fn from_vec(shape: &[usize], data: Vec<f64>) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("buffer length matches shape")
}

fn mat(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer length matches shape")
}

fn mat_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer length matches shape")
}

fn shape_err(what: &str, detail: String) -> Error {
    Error::ShapeMismatch(format!("{what}: {detail}"))
}

fn rank(tape: &Tape, var: Var, n: usize, what: &str) -> Result<Vec<usize>> {
    let shape = tape.shape(var);
    if shape.len() != n {
        return Err(shape_err(what, format!("expected rank {n}, got shape {shape:?}")));
    }
    Ok(shape)
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    entries: usize,
    c_in: usize,
    c_out: usize,
    frames: usize,
    joints: usize,
    partitions: usize,
}

impl ConvDims {
    fn entry_in(&self) -> usize {
        self.c_in * self.frames * self.joints
    }

    fn entry_out(&self) -> usize {
        self.c_out * self.frames * self.joints
    }
}

fn graph_conv_forward<'a>(
    x: &[f64],
    w: &[f64],
    adj: impl Fn(usize, usize) -> ArrayView2<'a, f64>,
    d: ConvDims,
) -> Vec<f64> {
    let (rows, tv) = (d.c_in * d.frames, d.frames * d.joints);
    let mut out = vec![0.0; d.entries * d.entry_out()];
    let mut y = vec![0.0; d.entry_in()];
    for e in 0..d.entries {
        let xe = mat(&x[e * d.entry_in()..(e + 1) * d.entry_in()], rows, d.joints);
        let oe = &mut out[e * d.entry_out()..(e + 1) * d.entry_out()];
        for k in 0..d.partitions {
            general_mat_mul(1.0, &xe, &adj(k, e), 0.0, &mut mat_mut(&mut y, rows, d.joints));
            let wk = mat(&w[k * d.c_out * d.c_in..(k + 1) * d.c_out * d.c_in], d.c_out, d.c_in);
            general_mat_mul(1.0, &wk, &mat(&y, d.c_in, tv), 1.0, &mut mat_mut(oe, d.c_out, tv));
        }
    }
    out
}

/// Returns gradients for the input, the weights and (when `want_adj`) the adjacency.
fn graph_conv_backward<'a>(
    x: &[f64],
    w: &[f64],
    adj: impl Fn(usize, usize) -> ArrayView2<'a, f64>,
    d: ConvDims,
    dout: &[f64],
    want_adj: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (rows, tv, v) = (d.c_in * d.frames, d.frames * d.joints, d.joints);
    let mut dx = vec![0.0; d.entries * d.entry_in()];
    let mut dw = vec![0.0; d.partitions * d.c_out * d.c_in];
    let mut dg = vec![0.0; if want_adj { d.partitions * v * v } else { 0 }];
    let mut y = vec![0.0; d.entry_in()];
    let mut dy = vec![0.0; d.entry_in()];
    for e in 0..d.entries {
        let xe = mat(&x[e * d.entry_in()..(e + 1) * d.entry_in()], rows, v);
        let de = mat(&dout[e * d.entry_out()..(e + 1) * d.entry_out()], d.c_out, tv);
        for k in 0..d.partitions {
            let a = adj(k, e);
            let wr = k * d.c_out * d.c_in..(k + 1) * d.c_out * d.c_in;
            general_mat_mul(1.0, &xe, &a, 0.0, &mut mat_mut(&mut y, rows, v));
            general_mat_mul(
                1.0,
                &de,
                &mat(&y, d.c_in, tv).t(),
                1.0,
                &mut mat_mut(&mut dw[wr.clone()], d.c_out, d.c_in),
            );
            let wk = mat(&w[wr], d.c_out, d.c_in);
            general_mat_mul(1.0, &wk.t(), &de, 0.0, &mut mat_mut(&mut dy, d.c_in, tv));
            let dxe = &mut dx[e * d.entry_in()..(e + 1) * d.entry_in()];
            general_mat_mul(1.0, &mat(&dy, rows, v), &a.t(), 1.0, &mut mat_mut(dxe, rows, v));
            if want_adj {
                let dgk = &mut dg[k * v * v..(k + 1) * v * v];
                general_mat_mul(1.0, &xe.t(), &mat(&dy, rows, v), 1.0, &mut mat_mut(dgk, v, v));
            }
        }
    }
    (dx, dw, dg)
}

/// `out_e = Σ_k W_k · x_e · G_k` per frame, with `x` `(E, C_in, T, V)`, `w`
/// `(K, C_out, C_in)` and `g` `(K, V, V)`. Gradients flow to all three.
pub fn graph_conv(tape: &Tape, x: Var, w: Var, g: Var) -> Result<Var> {
    let xs = rank(tape, x, 4, "graph_conv input")?;
    let ws = rank(tape, w, 3, "graph_conv weight")?;
    let gs = rank(tape, g, 3, "graph_conv adjacency")?;
    if ws[2] != xs[1] || gs[0] != ws[0] || gs[1] != xs[3] || gs[2] != xs[3] {
        return Err(shape_err(
            "graph_conv",
            format!("input {xs:?}, weight {ws:?}, adjacency {gs:?}"),
        ));
    }
    let d = ConvDims {
        entries: xs[0],
        c_in: xs[1],
        c_out: ws[1],
        frames: xs[2],
        joints: xs[3],
        partitions: ws[0],
    };
    let (xv, wv, gv) = (tape.value(x), tape.value(w), tape.value(g));
    let v = d.joints;
    let adj = |k: usize, _e: usize| mat(&flat(&gv)[k * v * v..(k + 1) * v * v], v, v);
    let out = graph_conv_forward(flat(&xv), flat(&wv), adj, d);
    let out_shape = [d.entries, d.c_out, d.frames, d.joints];
    Ok(tape.push(
        from_vec(&out_shape, out),
        vec![x, w, g],
        Box::new(move |dout| {
            let adj = |k: usize, _e: usize| mat(&flat(&gv)[k * v * v..(k + 1) * v * v], v, v);
            let (dx, dw, dg) = graph_conv_backward(flat(&xv), flat(&wv), adj, d, flat(dout), true);
            vec![from_vec(xv.shape(), dx), from_vec(wv.shape(), dw), from_vec(gv.shape(), dg)]
        }),
    ))
}

/// `out_e = M · x_e · As_{e / bodies}` per frame, with one constant `V×V` matrix per
/// sample in `adjacency` `(N, V, V)` and `m` `(C_out, C_in)`.
pub fn structural_conv(
    tape: &Tape,
    x: Var,
    m: Var,
    adjacency: Rc<Array3<f64>>,
    bodies: usize,
) -> Result<Var> {
    let xs = rank(tape, x, 4, "structural_conv input")?;
    let ms = rank(tape, m, 2, "structural_conv weight")?;
    let (n, v1, v2) = adjacency.dim();
    if ms[1] != xs[1] || bodies == 0 || n * bodies != xs[0] || v1 != xs[3] || v2 != xs[3] {
        return Err(shape_err(
            "structural_conv",
            format!("input {xs:?}, weight {ms:?}, adjacency {:?}, bodies {bodies}", adjacency.dim()),
        ));
    }
    let adjacency = if adjacency.is_standard_layout() {
        adjacency
    } else {
        Rc::new(adjacency.as_standard_layout().into_owned())
    };
    let d = ConvDims {
        entries: xs[0],
        c_in: xs[1],
        c_out: ms[0],
        frames: xs[2],
        joints: xs[3],
        partitions: 1,
    };
    let (xv, mv) = (tape.value(x), tape.value(m));
    let v = d.joints;
    let adj_flat = adjacency.as_slice().expect("standard layout");
    let adj = |_k: usize, e: usize| {
        let s = e / bodies;
        mat(&adj_flat[s * v * v..(s + 1) * v * v], v, v)
    };
    let out = graph_conv_forward(flat(&xv), flat(&mv), adj, d);
    let out_shape = [d.entries, d.c_out, d.frames, d.joints];
    Ok(tape.push(
        from_vec(&out_shape, out),
        vec![x, m],
        Box::new(move |dout| {
            let adj_flat = adjacency.as_slice().expect("standard layout");
            let adj = |_k: usize, e: usize| {
                let s = e / bodies;
                mat(&adj_flat[s * v * v..(s + 1) * v * v], v, v)
            };
            let (dx, dm, _) = graph_conv_backward(flat(&xv), flat(&mv), adj, d, flat(dout), false);
            vec![from_vec(xv.shape(), dx), from_vec(mv.shape(), dm)]
        }),
    ))
}

#[derive(Debug, Clone, Copy)]
struct TconvDims {
    entries: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    frames: usize,
    out_frames: usize,
    joints: usize,
}

impl TconvDims {
    fn im2col(&self, xe: &[f64], col: &mut [f64]) {
        let (v, pad) = (self.joints, self.kernel / 2);
        let width = self.out_frames * v;
        for c in 0..self.c_in {
            for j in 0..self.kernel {
                let row = &mut col[(c * self.kernel + j) * width..(c * self.kernel + j + 1) * width];
                for to in 0..self.out_frames {
                    let dst = &mut row[to * v..(to + 1) * v];
                    match (to * self.stride + j).checked_sub(pad) {
                        Some(t) if t < self.frames => {
                            dst.copy_from_slice(&xe[(c * self.frames + t) * v..(c * self.frames + t + 1) * v])
                        }
                        _ => dst.fill(0.0),
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dxe: &mut [f64]) {
        let (v, pad) = (self.joints, self.kernel / 2);
        let width = self.out_frames * v;
        for c in 0..self.c_in {
            for j in 0..self.kernel {
                let row = &col[(c * self.kernel + j) * width..(c * self.kernel + j + 1) * width];
                for to in 0..self.out_frames {
                    if let Some(t) = (to * self.stride + j).checked_sub(pad) {
                        if t < self.frames {
                            let dst = &mut dxe[(c * self.frames + t) * v..(c * self.frames + t + 1) * v];
                            for (d, s) in dst.iter_mut().zip(&row[to * v..(to + 1) * v]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-joint convolution along frames with an odd kernel, symmetric zero padding
/// and the given stride. `w` is `(C_out, C_in, K)`, `bias` `(C_out)`.
pub fn temporal_conv(tape: &Tape, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
    let xs = rank(tape, x, 4, "temporal_conv input")?;
    let ws = rank(tape, w, 3, "temporal_conv weight")?;
    if ws[1] != xs[1] || ws[2] % 2 == 0 || stride == 0 {
        return Err(shape_err(
            "temporal_conv",
            format!("input {xs:?}, weight {ws:?}, stride {stride} (kernel must be odd, stride positive)"),
        ));
    }
    if let Some(b) = bias {
        let bs = rank(tape, b, 1, "temporal_conv bias")?;
        if bs[0] != ws[0] {
            return Err(shape_err("temporal_conv bias", format!("{bs:?} for {} outputs", ws[0])));
        }
    }
    let d = TconvDims {
        entries: xs[0],
        c_in: xs[1],
        c_out: ws[0],
        kernel: ws[2],
        stride,
        frames: xs[2],
        out_frames: (xs[2].max(1) - 1) / stride + 1,
        joints: xs[3],
    };
    if d.frames == 0 {
        return Err(shape_err("temporal_conv", "zero frames".into()));
    }
    let (xv, wv) = (tape.value(x), tape.value(w));
    let bv = bias.map(|b| tape.value(b));
    let width = d.out_frames * d.joints;
    let (in_len, out_len, ck) = (d.c_in * d.frames * d.joints, d.c_out * width, d.c_in * d.kernel);

    let mut out = vec![0.0; d.entries * out_len];
    let mut col = vec![0.0; ck * width];
    let wm = mat(flat(&wv), d.c_out, ck);
    for e in 0..d.entries {
        d.im2col(&flat(&xv)[e * in_len..(e + 1) * in_len], &mut col);
        let oe = &mut out[e * out_len..(e + 1) * out_len];
        if let Some(b) = &bv {
            for (c, row) in oe.chunks_mut(width).enumerate() {
                row.fill(flat(b)[c]);
            }
        }
        general_mat_mul(1.0, &wm, &mat(&col, ck, width), 1.0, &mut mat_mut(oe, d.c_out, width));
    }

    let mut parents = vec![x, w];
    parents.extend(bias);
    Ok(tape.push(
        from_vec(&[d.entries, d.c_out, d.out_frames, d.joints], out),
        parents,
        Box::new(move |dout| {
            let dout = flat(dout);
            let wm = mat(flat(&wv), d.c_out, ck);
            let mut dx = vec![0.0; d.entries * in_len];
            let mut dw = vec![0.0; d.c_out * ck];
            let mut db = vec![0.0; d.c_out];
            let mut col = vec![0.0; ck * width];
            let mut dcol = vec![0.0; ck * width];
            for e in 0..d.entries {
                let de = mat(&dout[e * out_len..(e + 1) * out_len], d.c_out, width);
                d.im2col(&flat(&xv)[e * in_len..(e + 1) * in_len], &mut col);
                general_mat_mul(1.0, &de, &mat(&col, ck, width).t(), 1.0, &mut mat_mut(&mut dw, d.c_out, ck));
                general_mat_mul(1.0, &wm.t(), &de, 0.0, &mut mat_mut(&mut dcol, ck, width));
                d.col2im(&dcol, &mut dx[e * in_len..(e + 1) * in_len]);
                for (c, row) in de.rows().into_iter().enumerate() {
                    db[c] += row.sum();
                }
            }
            let mut grads = vec![from_vec(xv.shape(), dx), from_vec(wv.shape(), dw)];
            if bv.is_some() {
                grads.push(from_vec(&[d.c_out], db));
            }
            grads
        }),
    ))
}

/// Per-channel batch statistics of a training-mode normalization; `var` is unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

fn channel_view(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

fn check_affine(tape: &Tape, x: Var, gamma: Var, beta: Var, what: &str) -> Result<Vec<usize>> {
    let xs = tape.shape(x);
    if xs.len() < 2 {
        return Err(shape_err(what, format!("input {xs:?} has no channel axis")));
    }
    for p in [gamma, beta] {
        if tape.shape(p) != [xs[1]] {
            return Err(shape_err(what, format!("affine {:?} for input {xs:?}", tape.shape(p))));
        }
    }
    Ok(xs)
}

/// Normalizes each channel of `x` (axis 1) with statistics over all other axes.
pub fn batch_norm_train(tape: &Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
    let xs = check_affine(tape, x, gamma, beta, "batch_norm")?;
    let (outer, channels, inner) = channel_view(&xs);
    let count = (outer * inner) as f64;
    if count < 2.0 {
        return Err(shape_err("batch_norm", format!("needs at least 2 values per channel, input {xs:?}")));
    }
    let (xv, gv, bv) = (tape.value(x), tape.value(gamma), tape.value(beta));
    let xf = flat(&xv);
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for o in 0..outer {
        for c in 0..channels {
            let start = (o * channels + c) * inner;
            mean[c] += xf[start..start + inner].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for o in 0..outer {
        for c in 0..channels {
            let start = (o * channels + c) * inner;
            var[c] += xf[start..start + inner].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / count + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xf.len()];
    let mut out = vec![0.0; xf.len()];
    for o in 0..outer {
        for c in 0..channels {
            let start = (o * channels + c) * inner;
            for i in start..start + inner {
                xhat[i] = (xf[i] - mean[c]) * inv_std[c];
                out[i] = flat(&gv)[c] * xhat[i] + flat(&bv)[c];
            }
        }
    }
    let stats = BatchStats {
        mean: Array1::from(mean),
        var: Array1::from(var.iter().map(|v| v / (count - 1.0)).collect::<Vec<_>>()),
    };

    let node = tape.push(
        from_vec(&xs, out),
        vec![x, gamma, beta],
        Box::new(move |dout| {
            let dy = flat(dout);
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for o in 0..outer {
                for c in 0..channels {
                    let start = (o * channels + c) * inner;
                    for i in start..start + inner {
                        dbeta[c] += dy[i];
                        dgamma[c] += dy[i] * xhat[i];
                    }
                }
            }
            let mut dx = vec![0.0; dy.len()];
            for o in 0..outer {
                for c in 0..channels {
                    let scale = flat(&gv)[c] * inv_std[c];
                    let (mdy, mdyx) = (dbeta[c] / count, dgamma[c] / count);
                    let start = (o * channels + c) * inner;
                    for i in start..start + inner {
                        dx[i] = scale * (dy[i] - mdy - xhat[i] * mdyx);
                    }
                }
            }
            vec![from_vec(&xs, dx), from_vec(&[channels], dgamma), from_vec(&[channels], dbeta)]
        }),
    );
    Ok((node, stats))
}

/// Normalizes each channel of `x` with fixed statistics.
pub fn batch_norm_eval(
    tape: &Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &Array1<f64>,
    var: &Array1<f64>,
    eps: f64,
) -> Result<Var> {
    let xs = check_affine(tape, x, gamma, beta, "batch_norm")?;
    let (outer, channels, inner) = channel_view(&xs);
    if mean.len() != channels || var.len() != channels {
        return Err(shape_err("batch_norm", format!("running stats of length {} for {channels} channels", mean.len())));
    }
    let (xv, gv, bv) = (tape.value(x), tape.value(gamma), tape.value(beta));
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mean = mean.to_vec();
    let xf = flat(&xv);
    let mut out = vec![0.0; xf.len()];
    for o in 0..outer {
        for c in 0..channels {
            let start = (o * channels + c) * inner;
            for i in start..start + inner {
                out[i] = flat(&gv)[c] * (xf[i] - mean[c]) * inv_std[c] + flat(&bv)[c];
            }
        }
    }
    Ok(tape.push(
        from_vec(&xs, out),
        vec![x, gamma, beta],
        Box::new(move |dout| {
            let (dy, xf) = (flat(dout), flat(&xv));
            let mut dx = vec![0.0; dy.len()];
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for o in 0..outer {
                for c in 0..channels {
                    let start = (o * channels + c) * inner;
                    for i in start..start + inner {
                        let xhat = (xf[i] - mean[c]) * inv_std[c];
                        dx[i] = dy[i] * flat(&gv)[c] * inv_std[c];
                        dgamma[c] += dy[i] * xhat;
                        dbeta[c] += dy[i];
                    }
                }
            }
            vec![from_vec(&xs, dx), from_vec(&[channels], dgamma), from_vec(&[channels], dbeta)]
        }),
    ))
}

pub fn relu(tape: &Tape, x: Var) -> Var {
    let xv = tape.value(x);
    let out = xv.mapv(|v| v.max(0.0));
    tape.push(
        out,
        vec![x],
        Box::new(move |dout| {
            let mut g = dout.clone();
            g.zip_mut_with(&xv, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            });
            vec![g]
        }),
    )
}

pub fn add(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    if av.shape() != bv.shape() {
        return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
    }
    Ok(tape.push(&*av + &*bv, vec![a, b], Box::new(|dout| vec![dout.clone(), dout.clone()])))
}

/// `x + c` for a constant `c` of the same shape.
pub fn add_const(tape: &Tape, x: Var, c: &ArrayD<f64>) -> Result<Var> {
    let xv = tape.value(x);
    if xv.shape() != c.shape() {
        return Err(shape_err("add_const", format!("{:?} + {:?}", xv.shape(), c.shape())));
    }
    Ok(tape.push(&*xv + c, vec![x], Box::new(|dout| vec![dout.clone()])))
}

/// Mean over frames and joints, then max over the `bodies` entries of each sample:
/// `(N·bodies, C, T, V)` to `(N, C)`. Ties go to the lowest body slot.
pub fn pool(tape: &Tape, x: Var, bodies: usize) -> Result<Var> {
    let xs = rank(tape, x, 4, "pool input")?;
    if bodies == 0 || xs[0] % bodies != 0 {
        return Err(shape_err("pool", format!("{} entries for {bodies} bodies", xs[0])));
    }
    let (n, c, inner) = (xs[0] / bodies, xs[1], xs[2] * xs[3]);
    let xv = tape.value(x);
    let xf = flat(&xv);
    let mut out = vec![f64::NEG_INFINITY; n * c];
    let mut arg = vec![0usize; n * c];
    for s in 0..n {
        for m in 0..bodies {
            let e = s * bodies + m;
            for ch in 0..c {
                let start = (e * c + ch) * inner;
                let mean = xf[start..start + inner].iter().sum::<f64>() / inner as f64;
                if mean > out[s * c + ch] {
                    out[s * c + ch] = mean;
                    arg[s * c + ch] = e;
                }
            }
        }
    }
    Ok(tape.push(
        from_vec(&[n, c], out),
        vec![x],
        Box::new(move |dout| {
            let mut dx = vec![0.0; xs.iter().product()];
            for (i, (&e, &g)) in arg.iter().zip(flat(dout)).enumerate() {
                let start = (e * c + i % c) * inner;
                dx[start..start + inner].fill(g / inner as f64);
            }
            vec![from_vec(&xs, dx)]
        }),
    ))
}

/// Inverted dropout: survivors are scaled by `1 / (1 - p)`.
pub fn dropout<R: Rng>(tape: &Tape, x: Var, p: f64, rng: &mut R) -> Var {
    let xv = tape.value(x);
    let keep = 1.0 / (1.0 - p);
    let mask = xv.mapv(|_| if rng.gen::<f64>() < p { 0.0 } else { keep });
    let out = &*xv * &mask;
    tape.push(out, vec![x], Box::new(move |dout| vec![dout * &mask]))
}

/// `x · wᵀ + b` with `x` `(N, C_in)`, `w` `(C_out, C_in)`, `b` `(C_out)`.
pub fn linear(tape: &Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xs = rank(tape, x, 2, "linear input")?;
    let ws = rank(tape, w, 2, "linear weight")?;
    if ws[1] != xs[1] || tape.shape(b) != [ws[0]] {
        return Err(shape_err("linear", format!("input {xs:?}, weight {ws:?}, bias {:?}", tape.shape(b))));
    }
    let (n, c_in, c_out) = (xs[0], xs[1], ws[0]);
    let (xv, wv, bv) = (tape.value(x), tape.value(w), tape.value(b));
    let mut out = vec![0.0; n * c_out];
    for row in out.chunks_mut(c_out) {
        row.copy_from_slice(flat(&bv));
    }
    general_mat_mul(1.0, &mat(flat(&xv), n, c_in), &mat(flat(&wv), c_out, c_in).t(), 1.0, &mut mat_mut(&mut out, n, c_out));
    Ok(tape.push(
        from_vec(&[n, c_out], out),
        vec![x, w, b],
        Box::new(move |dout| {
            let dy = mat(flat(dout), n, c_out);
            let mut dx = vec![0.0; n * c_in];
            let mut dw = vec![0.0; c_out * c_in];
            general_mat_mul(1.0, &dy, &mat(flat(&wv), c_out, c_in), 0.0, &mut mat_mut(&mut dx, n, c_in));
            general_mat_mul(1.0, &dy.t(), &mat(flat(&xv), n, c_in), 0.0, &mut mat_mut(&mut dw, c_out, c_in));
            let db: Vec<f64> = dy.columns().into_iter().map(|c| c.sum()).collect();
            vec![from_vec(&[n, c_in], dx), from_vec(&[c_out, c_in], dw), from_vec(&[c_out], db)]
        }),
    ))
}

/// Row-wise softmax of an `(N, C)` array, stabilized by subtracting the row maximum.
pub fn softmax(logits: &ArrayD<f64>) -> ArrayD<f64> {
    let mut out = logits.clone();
    let c = *logits.shape().last().unwrap_or(&1);
    if let Some(data) = out.as_slice_mut() {
        for row in data.chunks_mut(c.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    out
}

/// Mean softmax cross-entropy of `(N, C)` logits against integer labels.
pub fn cross_entropy(tape: &Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = rank(tape, logits, 2, "cross_entropy logits")?;
    let (n, c) = (ls[0], ls[1]);
    if labels.len() != n {
        return Err(shape_err("cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let lv = tape.value(logits);
    let lf = flat(&lv);
    let mut loss = 0.0;
    for (row, &label) in lf.chunks(c).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    let probs = softmax(&lv);
    let labels = labels.to_vec();
    Ok(tape.push(
        from_vec(&[], vec![loss / n as f64]),
        vec![logits],
        Box::new(move |dout| {
            let scale = flat(dout)[0] / n as f64;
            let mut g = probs.clone();
            {
                let gf = g.as_slice_mut().expect("contiguous");
                for (row, &label) in gf.chunks_mut(c).zip(&labels) {
                    row[label] -= 1.0;
                }
                gf.iter_mut().for_each(|v| *v *= scale);
            }
            vec![g]
        }),
    ))
}

/// `Σ r ⊙ x` as a scalar, for turning any output into a checkable loss.
pub fn weighted_sum(tape: &Tape, x: Var, r: ArrayD<f64>) -> Result<Var> {
    let xv = tape.value(x);
    if xv.shape() != r.shape() {
        return Err(shape_err("weighted_sum", format!("{:?} against {:?}", xv.shape(), r.shape())));
    }
    let total = (&*xv * &r).sum();
    Ok(tape.push(
        from_vec(&[], vec![total]),
        vec![x],
        Box::new(move |dout| vec![&r * flat(dout)[0]]),
    ))
}
