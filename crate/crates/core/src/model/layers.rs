//! Dense kernels on `(batch, channels, spatial)` activations stored row-major.

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) fn linear_forward(x: &[f64], n: usize, inp: usize, out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * out];
    for s in 0..n {
        let xs = &x[s * inp..(s + 1) * inp];
        let ys = &mut y[s * out..(s + 1) * out];
        for (o, yo) in ys.iter_mut().enumerate() {
            let row = &w[o * inp..(o + 1) * inp];
            *yo = b[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    inp: usize,
    out: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * inp];
    for s in 0..n {
        let xs = &x[s * inp..(s + 1) * inp];
        let dxs = &mut dx[s * inp..(s + 1) * inp];
        for o in 0..out {
            let g = dy[s * out + o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let row = &w[o * inp..(o + 1) * inp];
            let drow = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                drow[i] += g * xs[i];
                dxs[i] += g * row[i];
            }
        }
    }
    dx
}

/// 3x3 convolution, stride 1, zero padding 1.
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

pub(crate) fn conv_forward(x: &[f64], n: usize, g: &ConvGeom, wt: &[f64], b: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let mut y = vec![0.0; n * g.cout * plane];
    for s in 0..n {
        for co in 0..g.cout {
            let out = &mut y[(s * g.cout + co) * plane..(s * g.cout + co + 1) * plane];
            out.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..g.cin {
                let inp = &x[(s * g.cin + ci) * plane..(s * g.cin + ci + 1) * plane];
                let k = &wt[(co * g.cin + ci) * 9..(co * g.cin + ci + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for yy in 0..g.h {
                            let sy = yy + ky;
                            if sy < 1 || sy > g.h {
                                continue;
                            }
                            let in_row = &inp[(sy - 1) * g.w..sy * g.w];
                            let out_row = &mut out[yy * g.w..(yy + 1) * g.w];
                            for xx in 0..g.w {
                                let sx = xx + kx;
                                if sx >= 1 && sx <= g.w {
                                    out_row[xx] += kv * in_row[sx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    g: &ConvGeom,
    wt: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let plane = g.plane();
    let mut dx = vec![0.0; x.len()];
    for s in 0..n {
        for co in 0..g.cout {
            let dout = &dy[(s * g.cout + co) * plane..(s * g.cout + co + 1) * plane];
            db[co] += dout.iter().sum::<f64>();
            for ci in 0..g.cin {
                let base = (s * g.cin + ci) * plane;
                let kidx = (co * g.cin + ci) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = wt[kidx + ky * 3 + kx];
                        let mut acc = 0.0;
                        for yy in 0..g.h {
                            let sy = yy + ky;
                            if sy < 1 || sy > g.h {
                                continue;
                            }
                            for xx in 0..g.w {
                                let sx = xx + kx;
                                if sx >= 1 && sx <= g.w {
                                    let d = dout[yy * g.w + xx];
                                    let src = base + (sy - 1) * g.w + sx - 1;
                                    acc += d * x[src];
                                    dx[src] += d * kv;
                                }
                            }
                        }
                        dw[kidx + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub(crate) fn maxpool_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward(arg: &[usize], dy: &[f64], in_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_len];
    for (&i, &d) in arg.iter().zip(dy) {
        dx[i] += d;
    }
    dx
}

/// How normalization statistics are pooled.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Pooling {
    /// One statistic per channel over batch and spatial positions.
    PerChannel,
    /// One statistic per (sample, channel group) over the group's channels and
    /// spatial positions.
    PerSampleGroup { groups: usize },
}

pub(crate) struct NormOut {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    /// Inverse standard deviation per statistic set.
    pub inv_std: Vec<f64>,
    /// Batch means/biased variances per channel (per-channel pooling only).
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

fn set_of(pool: Pooling, n_idx: usize, ch: usize, c: usize) -> usize {
    match pool {
        Pooling::PerChannel => ch,
        Pooling::PerSampleGroup { groups } => n_idx * groups + ch / (c / groups),
    }
}

fn set_count(pool: Pooling, n: usize, c: usize) -> usize {
    match pool {
        Pooling::PerChannel => c,
        Pooling::PerSampleGroup { groups } => n * groups,
    }
}

/// Normalizes with statistics computed from `x` itself.
pub(crate) fn norm_forward_batch(
    x: &[f64],
    n: usize,
    c: usize,
    spatial: usize,
    pool: Pooling,
    gamma: &[f64],
    beta: &[f64],
) -> NormOut {
    let sets = set_count(pool, n, c);
    let mut sum = vec![0.0; sets];
    let mut count = vec![0usize; sets];
    for s in 0..n {
        for ch in 0..c {
            let set = set_of(pool, s, ch, c);
            let row = &x[(s * c + ch) * spatial..(s * c + ch + 1) * spatial];
            sum[set] += row.iter().sum::<f64>();
            count[set] += spatial;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &m)| s / m as f64).collect();
    let mut sq = vec![0.0; sets];
    for s in 0..n {
        for ch in 0..c {
            let set = set_of(pool, s, ch, c);
            let row = &x[(s * c + ch) * spatial..(s * c + ch + 1) * spatial];
            sq[set] += row.iter().map(|v| (v - mean[set]).powi(2)).sum::<f64>();
        }
    }
    let var: Vec<f64> = sq.iter().zip(&count).map(|(s, &m)| s / m as f64).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();

    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let set = set_of(pool, s, ch, c);
            let off = (s * c + ch) * spatial;
            for p in off..off + spatial {
                xhat[p] = (x[p] - mean[set]) * inv_std[set];
                y[p] = gamma[ch] * xhat[p] + beta[ch];
            }
        }
    }
    let (batch_mean, batch_var) = match pool {
        Pooling::PerChannel => (mean, var),
        Pooling::PerSampleGroup { .. } => (Vec::new(), Vec::new()),
    };
    NormOut { y, xhat, inv_std, batch_mean, batch_var }
}

/// Per-channel normalization with fixed (running) statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_forward_fixed(
    x: &[f64],
    n: usize,
    c: usize,
    spatial: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> NormOut {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * spatial;
            for p in off..off + spatial {
                xhat[p] = (x[p] - mean[ch]) * inv_std[ch];
                y[p] = gamma[ch] * xhat[p] + beta[ch];
            }
        }
    }
    NormOut { y, xhat, inv_std, batch_mean: Vec::new(), batch_var: Vec::new() }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    n: usize,
    c: usize,
    spatial: usize,
    pool: Pooling,
    batch_stats: bool,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * spatial;
            for p in off..off + spatial {
                dgamma[ch] += dy[p] * xhat[p];
                dbeta[ch] += dy[p];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    if !batch_stats {
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * spatial;
                for p in off..off + spatial {
                    dx[p] = dy[p] * gamma[ch] * inv_std[ch];
                }
            }
        }
        return dx;
    }
    let sets = set_count(pool, n, c);
    let mut sum1 = vec![0.0; sets];
    let mut sum2 = vec![0.0; sets];
    let mut count = vec![0usize; sets];
    for s in 0..n {
        for ch in 0..c {
            let set = set_of(pool, s, ch, c);
            let off = (s * c + ch) * spatial;
            for p in off..off + spatial {
                let g = dy[p] * gamma[ch];
                sum1[set] += g;
                sum2[set] += g * xhat[p];
            }
            count[set] += spatial;
        }
    }
    for s in 0..n {
        for ch in 0..c {
            let set = set_of(pool, s, ch, c);
            let m = count[set] as f64;
            let off = (s * c + ch) * spatial;
            for p in off..off + spatial {
                let g = dy[p] * gamma[ch];
                dx[p] = inv_std[set] * (g - sum1[set] / m - xhat[p] * sum2[set] / m);
            }
        }
    }
    dx
}
