//! Early-exit convolutional classifier: three conv blocks, an auxiliary
//! head after the second block and a two-layer main head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::*;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Clip bound for probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Parameter count of the default architecture (9 input channels).
pub const DEFAULT_PARAM_COUNT: usize = 26_594;

pub const PARAM_KEYS: [&str; 12] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "aux.weight",
    "aux.bias",
    "conv3.weight",
    "conv3.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

const C1W: usize = 0;
const C1B: usize = 1;
const C2W: usize = 2;
const C2B: usize = 3;
const AW: usize = 4;
const AB: usize = 5;
const C3W: usize = 6;
const C3B: usize = 7;
const F1W: usize = 8;
const F1B: usize = 9;
const F2W: usize = 10;
const F2B: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub widths: [usize; 3],
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            in_h: 32,
            in_w: 60,
            in_c: 9,
            widths: [16, 32, 64],
            hidden: 32,
            kernel: 3,
        }
    }
}

impl Arch {
    pub fn with_input(in_h: usize, in_w: usize, in_c: usize) -> Self {
        Self {
            in_h,
            in_w,
            in_c,
            ..Self::default()
        }
    }

    pub fn param_shapes(&self) -> [Vec<usize>; 12] {
        let [c1, c2, c3] = self.widths;
        let k = self.kernel;
        [
            vec![c1, self.in_c, k, k],
            vec![c1],
            vec![c2, c1, k, k],
            vec![c2],
            vec![1, c2],
            vec![1],
            vec![c3, c2, k, k],
            vec![c3],
            vec![self.hidden, c3],
            vec![self.hidden],
            vec![1, self.hidden],
            vec![1],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Trainable tensors in [`PARAM_KEYS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            tensors: arch
                .param_shapes()
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
        }
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng>(arch: Arch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if PARAM_KEYS[i].ends_with(".bias") {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in t.data_mut() {
                *v = normal.sample(rng);
            }
        }
        p
    }

    /// Rebuild from named tensors; every key must be present with the shape
    /// implied by `arch`, and no extra keys are allowed.
    pub fn from_named(arch: Arch, named: Vec<(String, Tensor)>) -> Result<Self> {
        if named.len() != PARAM_KEYS.len() {
            return Err(Error::Integrity(format!(
                "expected {} parameter tensors, got {}",
                PARAM_KEYS.len(),
                named.len()
            )));
        }
        let shapes = arch.param_shapes();
        let mut tensors = Vec::with_capacity(PARAM_KEYS.len());
        for (i, key) in PARAM_KEYS.iter().enumerate() {
            let t = named
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Integrity(format!("missing parameter {key}")))?;
            if t.shape() != shapes[i].as_slice() {
                return Err(Error::Integrity(format!(
                    "parameter {key} has shape {:?}, expected {:?}",
                    t.shape(),
                    shapes[i]
                )));
            }
            tensors.push(t);
        }
        Ok(Self { arch, tensors })
    }

    /// Infer the architecture from tensor shapes (input size is supplied).
    pub fn from_named_infer(
        in_h: usize,
        in_w: usize,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let get = |key: &str| {
            named
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, t)| t.shape().to_vec())
                .ok_or_else(|| Error::Integrity(format!("missing parameter {key}")))
        };
        let c1 = get("conv1.weight")?;
        let c2 = get("conv2.weight")?;
        let c3 = get("conv3.weight")?;
        let f1 = get("fc1.weight")?;
        if c1.len() != 4 || c2.len() != 4 || c3.len() != 4 || f1.len() != 2 {
            return Err(Error::Integrity("malformed parameter shapes".into()));
        }
        let arch = Arch {
            in_h,
            in_w,
            in_c: c1[1],
            widths: [c1[0], c2[0], c3[0]],
            hidden: f1[0],
            kernel: c1[2],
        };
        Self::from_named(arch, named)
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_KEYS.iter().copied().zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        PARAM_KEYS
            .iter()
            .position(|k| *k == key)
            .map(|i| &self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Every value rounded through `f32`, as a checkpoint file stores it.
    pub fn rounded_f32(self) -> Self {
        Self {
            arch: self.arch,
            tensors: self.tensors.iter().map(Tensor::to_f32_precision).collect(),
        }
    }

    fn d(&self, i: usize) -> &[f64] {
        self.tensors[i].data()
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Activations kept for backpropagation.
struct Cache {
    a1: Vec<f64>,
    p1: Vec<f64>,
    i1: Vec<usize>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    i2: Vec<usize>,
    g2: Vec<f64>,
    a3: Vec<f64>,
    i3: Vec<usize>,
    g3: Vec<f64>,
    h1: Vec<f64>,
    p_aux: f64,
    p_final: f64,
}

#[derive(Clone, Copy)]
struct Dims {
    h: [usize; 3],
    w: [usize; 3],
}

impl Dims {
    fn of(arch: &Arch) -> Self {
        let h = [arch.in_h, arch.in_h / 2, arch.in_h / 4];
        let w = [arch.in_w, arch.in_w / 2, arch.in_w / 4];
        Self { h, w }
    }
}

/// Check a sample is `[in_c, in_h, in_w]` and large enough for three pools.
pub fn check_input(arch: &Arch, x: &Tensor) -> Result<()> {
    let want = [arch.in_c, arch.in_h, arch.in_w];
    if x.shape() != want {
        return Err(Error::Integrity(format!(
            "input shape {:?} does not match model input {:?}",
            x.shape(),
            want
        )));
    }
    if arch.in_h < 8 || arch.in_w < 8 {
        return Err(Error::Integrity("input must be at least 8x8".into()));
    }
    Ok(())
}

/// Blocks 1 and 2 plus the auxiliary head.
fn forward_prefix(
    p: &ModelParams,
    x: &[f64],
) -> (
    Vec<f64>,
    Vec<f64>,
    Vec<usize>,
    Vec<f64>,
    Vec<f64>,
    Vec<usize>,
    Vec<f64>,
    f64,
) {
    let a = &p.arch;
    let d = Dims::of(a);
    let [c1, c2, _] = a.widths;
    let k = a.kernel;
    let mut a1 = conv2d_forward(x, a.in_c, d.h[0], d.w[0], p.d(C1W), p.d(C1B), c1, k);
    relu_inplace(&mut a1);
    let (p1, i1) = maxpool2_forward(&a1, c1, d.h[0], d.w[0]);
    let mut a2 = conv2d_forward(&p1, c1, d.h[1], d.w[1], p.d(C2W), p.d(C2B), c2, k);
    relu_inplace(&mut a2);
    let (p2, i2) = maxpool2_forward(&a2, c2, d.h[1], d.w[1]);
    let g2 = gap_forward(&p2, c2, d.h[2] * d.w[2]);
    let z_aux = dense_forward(&g2, p.d(AW), p.d(AB))[0];
    (a1, p1, i1, a2, p2, i2, g2, sigmoid(z_aux))
}

fn forward_cached(p: &ModelParams, x: &[f64]) -> Cache {
    let a = &p.arch;
    let d = Dims::of(a);
    let [_, c2, c3] = a.widths;
    let (a1, p1, i1, a2, p2, i2, g2, p_aux) = forward_prefix(p, x);
    let mut a3 = conv2d_forward(&p2, c2, d.h[2], d.w[2], p.d(C3W), p.d(C3B), c3, a.kernel);
    relu_inplace(&mut a3);
    let (p3, i3) = maxpool2_forward(&a3, c3, d.h[2], d.w[2]);
    let g3 = gap_forward(&p3, c3, (d.h[2] / 2) * (d.w[2] / 2));
    let mut h1 = dense_forward(&g3, p.d(F1W), p.d(F1B));
    relu_inplace(&mut h1);
    let z = dense_forward(&h1, p.d(F2W), p.d(F2B))[0];
    let cache = Cache {
        a1,
        p1,
        i1,
        a2,
        p2,
        i2,
        g2,
        a3,
        i3,
        g3,
        h1,
        p_aux,
        p_final: sigmoid(z),
    };
    debug_assert!(
        cache.p_aux.is_finite() && cache.p_final.is_finite(),
        "non-finite output"
    );
    cache
}

/// `(p_aux, p_final)` for one sample.
pub fn forward_one(p: &ModelParams, x: &Tensor) -> Result<(f64, f64)> {
    check_input(&p.arch, x)?;
    let c = forward_cached(p, x.data());
    Ok((c.p_aux, c.p_final))
}

/// Both heads' probabilities for a batch of channel-major samples.
pub fn forward(p: &ModelParams, batch: &[Tensor]) -> Result<(Vec<f64>, Vec<f64>)> {
    for x in batch {
        check_input(&p.arch, x)?;
    }
    let out: Vec<(f64, f64)> = batch
        .par_iter()
        .map(|x| {
            let c = forward_cached(p, x.data());
            (c.p_aux, c.p_final)
        })
        .collect();
    Ok(out.into_iter().unzip())
}

/// Auxiliary-head probability only (blocks 1-2).
pub fn forward_aux(p: &ModelParams, x: &Tensor) -> Result<f64> {
    check_input(&p.arch, x)?;
    Ok(forward_prefix(p, x.data()).7)
}

fn bce_one(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Summed binary cross-entropy over a batch with clipped probabilities.
pub fn bce(p: &[f64], labels: &[u8]) -> f64 {
    p.iter()
        .zip(labels)
        .map(|(p, y)| bce_one(*p, f64::from(*y)))
        .sum()
}

/// `BCE(p_final) + lambda * BCE(p_aux)`, summed over the batch.
pub fn loss(p_aux: &[f64], p_final: &[f64], labels: &[u8], lambda_aux: f64) -> f64 {
    bce(p_final, labels) + lambda_aux * bce(p_aux, labels)
}

/// d(BCE)/d(logit); zero inside the clipped region.
fn logit_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        0.0
    } else {
        p - y
    }
}

fn backward_one(p: &ModelParams, x: &[f64], y: u8, lambda_aux: f64) -> (Gradients, f64) {
    let a = &p.arch;
    let d = Dims::of(a);
    let [c1, c2, c3] = a.widths;
    let k = a.kernel;
    let c = forward_cached(p, x);
    let yf = f64::from(y);
    let sample_loss = bce_one(c.p_final, yf) + lambda_aux * bce_one(c.p_aux, yf);
    let mut g = ModelParams::zeros(*a);
    let [gc1w, gc1b, gc2w, gc2b, gaw, gab, gc3w, gc3b, gf1w, gf1b, gf2w, gf2b] = &mut g.tensors[..]
    else {
        unreachable!("fixed parameter layout")
    };

    // main head
    let dz = logit_grad(c.p_final, yf);
    let mut dh = dense_backward(&c.h1, p.d(F2W), &[dz], gf2w.data_mut(), gf2b.data_mut());
    relu_backward(&c.h1, &mut dh);
    let dg3 = dense_backward(&c.g3, p.d(F1W), &dh, gf1w.data_mut(), gf1b.data_mut());
    let plane3 = (d.h[2] / 2) * (d.w[2] / 2);
    let dp3: Vec<f64> = dg3
        .iter()
        .flat_map(|v| std::iter::repeat_n(v / plane3 as f64, plane3))
        .collect();
    let mut da3 = maxpool2_backward(&c.i3, &dp3, c.a3.len());
    relu_backward(&c.a3, &mut da3);
    let mut dp2 = conv2d_backward(
        &c.p2,
        c2,
        d.h[2],
        d.w[2],
        p.d(C3W),
        c3,
        k,
        &da3,
        gc3w.data_mut(),
        gc3b.data_mut(),
        true,
    )
    .expect("input gradient requested");

    // auxiliary head
    let dz_aux = lambda_aux * logit_grad(c.p_aux, yf);
    let dg2 = dense_backward(&c.g2, p.d(AW), &[dz_aux], gaw.data_mut(), gab.data_mut());
    let plane2 = d.h[2] * d.w[2];
    for (ch, v) in dg2.iter().enumerate() {
        for e in &mut dp2[ch * plane2..(ch + 1) * plane2] {
            *e += v / plane2 as f64;
        }
    }

    let mut da2 = maxpool2_backward(&c.i2, &dp2, c.a2.len());
    relu_backward(&c.a2, &mut da2);
    let dp1 = conv2d_backward(
        &c.p1,
        c1,
        d.h[1],
        d.w[1],
        p.d(C2W),
        c2,
        k,
        &da2,
        gc2w.data_mut(),
        gc2b.data_mut(),
        true,
    )
    .expect("input gradient requested");
    let mut da1 = maxpool2_backward(&c.i1, &dp1, c.a1.len());
    relu_backward(&c.a1, &mut da1);
    conv2d_backward(
        x,
        a.in_c,
        d.h[0],
        d.w[0],
        p.d(C1W),
        c1,
        k,
        &da1,
        gc1w.data_mut(),
        gc1b.data_mut(),
        false,
    );
    (g, sample_loss)
}

/// Summed loss and gradients over `batch`. Per-sample work runs in
/// parallel; the reduction is in sample order, so results do not depend on
/// the thread count.
pub fn loss_and_grad(
    p: &ModelParams,
    batch: &[&Tensor],
    labels: &[u8],
    lambda_aux: f64,
) -> Result<(f64, Gradients)> {
    if batch.len() != labels.len() {
        return Err(Error::Integrity("batch and label counts differ".into()));
    }
    for x in batch {
        check_input(&p.arch, x)?;
    }
    let parts: Vec<(Gradients, f64)> = batch
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, y)| backward_one(p, x.data(), *y, lambda_aux))
        .collect();
    let mut total = ModelParams::zeros(p.arch);
    let mut l = 0.0;
    for (g, sl) in &parts {
        total.add_assign(g);
        l += sl;
    }
    Ok((l, total))
}

/// Probability of class 1 (eavesdropper) with an optional early exit.
/// Returns `(probability, exited)`.
pub fn predict_early_exit(
    p: &ModelParams,
    x: &Tensor,
    policy: Option<EarlyExitPolicy>,
) -> Result<(f64, bool)> {
    check_input(&p.arch, x)?;
    if let Some(policy) = policy {
        let p_aux = forward_prefix(p, x.data()).7;
        if policy.exits(p_aux) {
            return Ok((p_aux, true));
        }
    }
    Ok((forward_cached(p, x.data()).p_final, false))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyExitPolicy {
    pub cl: f64,
}

impl EarlyExitPolicy {
    pub fn new(cl: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&cl) {
            return Err(Error::invariant(
                "early_exit_cl out of range",
                format!("{cl} not in [0.5, 1)"),
            ));
        }
        Ok(Self { cl })
    }

    pub fn confidence(p: f64) -> f64 {
        p.max(1.0 - p)
    }

    pub fn exits(&self, p_aux: f64) -> bool {
        Self::confidence(p_aux) >= self.cl
    }
}
