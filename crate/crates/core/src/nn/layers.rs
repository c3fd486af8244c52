//! Kernels on single channel-major (`C x H x W`) samples.

/// Same-padded, stride-1 2-D cross-correlation.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for (co, o) in out.chunks_exact_mut(plane).enumerate() {
        o.fill(bias[co]);
        for ci in 0..c_in {
            let xin = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * c_in + ci) * k + ky) * k + kx];
                    let Some(win) = Window::new(h, w, k, ky, kx) else {
                        continue;
                    };
                    for y in win.y0..win.y1 {
                        let dst = &mut o[y * w + win.x0..y * w + win.x1];
                        let s = win.src(y, w);
                        let n = dst.len();
                        for (a, b) in dst.iter_mut().zip(&xin[s..s + n]) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]: accumulates into `dw`/`db` and returns
/// the input gradient when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let plane = h * w;
    let mut dx = want_dx.then(|| vec![0.0; c_in * plane]);
    for co in 0..c_out {
        let g = &dout[co * plane..(co + 1) * plane];
        db[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let xin = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((co * c_in + ci) * k + ky) * k + kx;
                    let Some(win) = Window::new(h, w, k, ky, kx) else {
                        continue;
                    };
                    let mut acc = 0.0;
                    for y in win.y0..win.y1 {
                        let grow = &g[y * w + win.x0..y * w + win.x1];
                        let s = win.src(y, w);
                        acc += dot(grow, &xin[s..s + grow.len()]);
                    }
                    dw[wi] += acc;
                    if let Some(dx) = dx.as_mut() {
                        let wv = weight[wi];
                        let dxc = &mut dx[ci * plane..(ci + 1) * plane];
                        for y in win.y0..win.y1 {
                            let grow = &g[y * w + win.x0..y * w + win.x1];
                            let s = win.src(y, w);
                            for (d, gv) in dxc[s..s + grow.len()].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Dot product with four independent accumulators so it vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Output rows/cols where kernel tap `(ky, kx)` reads inside the input.
struct Window {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    dy: isize,
    dx: isize,
}

impl Window {
    fn new(h: usize, w: usize, k: usize, ky: usize, kx: usize) -> Option<Self> {
        let pad = (k / 2) as isize;
        let dy = ky as isize - pad;
        let dx = kx as isize - pad;
        let y0 = (-dy).max(0) as usize;
        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
        (y0 < y1 && x0 < x1).then_some(Self {
            y0,
            y1,
            x0,
            x1,
            dy,
            dx,
        })
    }

    fn src(&self, y: usize, w: usize) -> usize {
        ((y as isize + self.dy) as usize) * w + (self.x0 as isize + self.dx) as usize
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling (floor). Returns the pooled map and, for every
/// output, the flat input index of its maximum (first on ties).
pub fn maxpool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(idx: &[usize], dout: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (i, g) in idx.iter().zip(dout) {
        dx[*i] += g;
    }
    dx
}

/// Global average pool over each `h x w` plane.
pub fn gap_forward(x: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

/// `y = W x + b` with `W` of shape `out x in`.
pub fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(o, b)| {
            b + weight[o * x.len()..(o + 1) * x.len()]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
        })
        .collect()
}

/// Accumulate dense-layer parameter gradients; return the input gradient.
pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        for ((dwv, xv), (dxv, wv)) in dw[o * n_in..(o + 1) * n_in]
            .iter_mut()
            .zip(x)
            .zip(dx.iter_mut().zip(row))
        {
            *dwv += g * xv;
            *dxv += g * wv;
        }
    }
    dx
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_laplacian() {
        let x: Vec<f64> = (1..=16).map(f64::from).collect();
        let k = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        let out = conv2d_forward(&x, 1, 4, 4, &k, &[0.0], 1, 3);
        #[rustfmt::skip]
        let expected = [
            3.0, 2.0, 1.0, -5.0,
            -4.0, 0.0, 0.0, -9.0,
            -8.0, 0.0, 0.0, -13.0,
            -29.0, -18.0, -19.0, -37.0,
        ];
        assert_eq!(out, expected);
    }

    #[test]
    fn asymmetric_kernel_is_correlation_not_convolution() {
        // Kernel reads only the right-hand neighbour.
        let x: Vec<f64> = (1..=16).map(f64::from).collect();
        let mut k = [0.0; 9];
        k[5] = 1.0;
        let out = conv2d_forward(&x, 1, 4, 4, &k, &[0.5], 1, 3);
        assert_eq!(&out[..4], &[2.5, 3.5, 4.5, 0.5]);
    }

    #[test]
    fn pooling_picks_maxima_and_floors() {
        #[rustfmt::skip]
        let x = [
            1.0, 5.0, 2.0, 9.0, 9.0,
            3.0, 4.0, 8.0, 0.0, 9.0,
            7.0, 7.0, 7.0, 7.0, 9.0,
        ];
        let (out, idx) = maxpool2_forward(&x, 1, 3, 5);
        assert_eq!(out, vec![5.0, 9.0]);
        assert_eq!(idx, vec![1, 3]);
        let back = maxpool2_backward(&idx, &[1.0, 2.0], x.len());
        assert_eq!(back.iter().sum::<f64>(), 3.0);
        assert_eq!(back[3], 2.0);
    }

    #[test]
    fn dense_round_trip_shapes() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = dense_forward(&[1.0, 0.0, -1.0], &w, &[0.5, 0.0]);
        assert_eq!(y, vec![-1.5, -2.0]);
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let dx = dense_backward(&[1.0, 0.0, -1.0], &w, &[1.0, 1.0], &mut dw, &mut db);
        assert_eq!(dx, vec![5.0, 7.0, 9.0]);
        assert_eq!(dw, [1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
    }
}
