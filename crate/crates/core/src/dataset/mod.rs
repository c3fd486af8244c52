//! Labelled CSI images: one sample per UE built from its serving link,
//! stratified splitting, input statistics and client sharding.

mod container;

pub use container::{
    decode_dataset, encode_dataset, inspect, load_dataset, save_dataset, DatasetSummary,
    HEADER_BYTES, META_BYTES,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{CMatrix, ChannelField, RisConfiguration};
use crate::error::{Error, Result};
use crate::io::content_hash;
use crate::nn::{LabeledSet, Tensor};
use crate::scenario::{RisPlane, ScenarioConfig};
use crate::topology::{Association, NodeId, Point3, Topology};

pub const CSI_PLANES: usize = 3;
pub const META_PLANES: usize = 6;
pub const CHANNELS: usize = CSI_PLANES + META_PLANES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub ue: u32,
    pub position: Point3,
    pub p_tx_dbm: f64,
    pub serving_ap: u32,
    pub serving_ris: u32,
    pub phase_id: u32,
}

/// One labelled CSI image, `H x W x C` row-major (antennas x RBs x planes).
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub tensor: Vec<f32>,
    pub label: u8,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

impl SplitTag {
    pub fn code(self) -> u32 {
        match self {
            SplitTag::Full => 0,
            SplitTag::Train => 1,
            SplitTag::Test => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(SplitTag::Full),
            1 => Some(SplitTag::Train),
            2 => Some(SplitTag::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub tag: SplitTag,
    pub samples: Vec<CsiSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(legitimate, eavesdropper)` sample counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let eves = self.samples.iter().filter(|s| s.label == 1).count();
        (self.len() - eves, eves)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn content_hash(&self) -> String {
        content_hash(&encode_dataset(self))
    }

    fn with_samples(&self, tag: SplitTag, samples: Vec<CsiSample>) -> Self {
        Self {
            h: self.h,
            w: self.w,
            c: self.c,
            tag,
            samples,
        }
    }
}

/// Real, imaginary and magnitude planes scaled by the sample's largest
/// absolute entry among the three, so all values lie in `[-1, 1]`.
pub fn build_csi_image(h_eff: &CMatrix) -> [Vec<f64>; 3] {
    let s = h_eff
        .data
        .iter()
        .map(|v| v.re.abs().max(v.im.abs()).max(v.norm()))
        .fold(0.0, f64::max);
    if s == 0.0 || !s.is_finite() {
        let zeros = vec![0.0; h_eff.data.len()];
        return [zeros.clone(), zeros.clone(), zeros];
    }
    [
        h_eff.data.iter().map(|v| v.re / s).collect(),
        h_eff.data.iter().map(|v| v.im / s).collect(),
        h_eff.data.iter().map(|v| v.norm() / s).collect(),
    ]
}

/// Values of the six constant metadata planes: transmit power over
/// `[p_lu, p_eve_max]`, UE x and y, serving-AP x and y, and the UE-to-RIS
/// horizontal distance over the area diagonal (or the RIS x coordinate).
pub fn build_metadata_planes(
    meta: &SampleMeta,
    topology: &Topology,
    config: &ScenarioConfig,
) -> [f64; META_PLANES] {
    let [ax, ay] = topology.area;
    let p_lo = config.radio.p_lu_dbm;
    let p_hi = config.topology.eve_power_range_dbm[1];
    let power = if p_hi > p_lo {
        ((meta.p_tx_dbm - p_lo) / (p_hi - p_lo)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let ap = topology.ap_pos[meta.serving_ap as usize];
    let ris = topology.ris[meta.serving_ris as usize].position;
    let ris_plane = match config.dataset.ris_plane {
        RisPlane::Distance => meta.position.horizontal_distance(ris) / ax.hypot(ay),
        RisPlane::X => ris.x / ax,
    };
    [
        power,
        meta.position.x / ax,
        meta.position.y / ay,
        ap.x / ax,
        ap.y / ay,
        ris_plane,
    ]
}

/// Interleave planes into an `H x W x C` f32 tensor.
fn assemble(csi: &[Vec<f64>; 3], meta: &[f64; META_PLANES], hw: usize) -> Vec<f32> {
    let mut t = Vec::with_capacity(hw * CHANNELS);
    for i in 0..hw {
        t.extend(csi.iter().map(|p| p[i] as f32));
        t.extend(meta.iter().map(|v| *v as f32));
    }
    t
}

/// One sample per UE from its serving-AP effective channel through its
/// serving RIS, in UE order.
pub fn generate_dataset(
    field: &ChannelField<'_>,
    association: &Association,
    ris_cfg: &[RisConfiguration],
) -> Result<Dataset> {
    let topology = field.topology;
    let config = field.config;
    if association.serving_ap.len() != topology.n_ue()
        || association.serving_ris.len() != topology.n_ue()
    {
        return Err(Error::Integrity(
            "association does not cover every UE".into(),
        ));
    }
    if ris_cfg.len() != topology.n_ris() {
        return Err(Error::Integrity(format!(
            "{} RIS configurations for {} panels",
            ris_cfg.len(),
            topology.n_ris()
        )));
    }
    let (h, w) = (config.radio.ap_antennas, config.radio.n_rb);
    let samples = (0..topology.n_ue())
        .into_par_iter()
        .map(|ue| {
            let ap = association.serving_ap[ue].index;
            let ris = association.serving_ris[ue].index;
            let h_eff = field.factored_link(ue, ap, ris).effective(&ris_cfg[ris]);
            let meta = SampleMeta {
                ue: ue as u32,
                position: topology.ue_pos[ue],
                p_tx_dbm: topology.ue_power_dbm[ue],
                serving_ap: ap as u32,
                serving_ris: ris as u32,
                phase_id: field.phase_id,
            };
            let csi = build_csi_image(&h_eff);
            let planes = build_metadata_planes(&meta, topology, config);
            CsiSample {
                tensor: assemble(&csi, &planes, h * w),
                label: u8::from(topology.ue_is_eve[ue]),
                meta,
            }
        })
        .collect();
    Ok(Dataset {
        h,
        w,
        c: CHANNELS,
        tag: SplitTag::Full,
        samples,
    })
}

pub fn split_stream_id(phase_id: u32) -> String {
    format!("split:phase_{phase_id}")
}

/// Stratified split: each class is shuffled and `floor(n_c * (1 - ratio))`
/// of its samples go to test. Both sides are returned in UE order.
pub fn split<R: Rng>(dataset: &Dataset, ratio: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invariant(
            "train_ratio out of range",
            format!("{ratio} not in (0, 1)"),
        ));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|i| dataset.samples[*i].label == class)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {class} has {} sample(s); a stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        let n_test = (idx.len() as f64 * (1.0 - ratio) + 1e-9).floor() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    let pick = |mut ids: Vec<usize>| {
        ids.sort_by_key(|i| dataset.samples[*i].meta.ue);
        ids.into_iter()
            .map(|i| dataset.samples[i].clone())
            .collect()
    };
    Ok((
        dataset.with_samples(SplitTag::Train, pick(train)),
        dataset.with_samples(SplitTag::Test, pick(test)),
    ))
}

/// Per-plane mean and standard deviation of the metadata planes over a
/// (training) set, used to standardise model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; META_PLANES],
    pub std: [f64; META_PLANES],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; META_PLANES],
            std: [1.0; META_PLANES],
        }
    }

    /// Metadata planes are constant per sample, so the first pixel holds
    /// each plane's value.
    pub fn compute(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Dataset(
                "normalisation needs a nonempty training set".into(),
            ));
        }
        let n = train.len() as f64;
        let mut mean = [0.0; META_PLANES];
        let mut std = [0.0; META_PLANES];
        for k in 0..META_PLANES {
            let vals = train
                .samples
                .iter()
                .map(|s| f64::from(s.tensor[CSI_PLANES + k]));
            mean[k] = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn to_tensors(&self) -> [(String, Tensor); 2] {
        [
            (
                "input_norm.mean".into(),
                Tensor::from_vec(&[META_PLANES], self.mean.to_vec()),
            ),
            (
                "input_norm.std".into(),
                Tensor::from_vec(&[META_PLANES], self.std.to_vec()),
            ),
        ]
    }

    pub fn from_tensors(mean: &Tensor, std: &Tensor) -> Result<Self> {
        if mean.len() != META_PLANES || std.len() != META_PLANES {
            return Err(Error::Integrity(
                "input statistics must have one value per metadata plane".into(),
            ));
        }
        let mut out = Self::identity();
        out.mean.copy_from_slice(mean.data());
        out.std.copy_from_slice(std.data());
        Ok(out)
    }
}

/// Channel-major f64 inputs with standardised metadata planes.
pub fn model_inputs(dataset: &Dataset, stats: &NormStats) -> LabeledSet {
    let (h, w, c) = (dataset.h, dataset.w, dataset.c);
    let hw = h * w;
    let inputs = dataset
        .samples
        .par_iter()
        .map(|s| {
            let mut chw = vec![0.0; c * hw];
            for (i, px) in s.tensor.chunks_exact(c).enumerate() {
                for (k, v) in px.iter().enumerate() {
                    let v = f64::from(*v);
                    chw[k * hw + i] = if k >= CSI_PLANES {
                        (v - stats.mean[k - CSI_PLANES]) / stats.std[k - CSI_PLANES]
                    } else {
                        v
                    };
                }
            }
            Tensor::from_vec(&[c, h, w], chw)
        })
        .collect();
    LabeledSet {
        inputs,
        labels: dataset.labels(),
    }
}

/// Training samples owned by one FL client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_ap: NodeId,
    pub data: Dataset,
}

/// Assign each sample to the client AP horizontally nearest its UE (lower
/// index on ties).
pub fn partition_clients(
    train: &Dataset,
    client_aps: &[NodeId],
    topology: &Topology,
) -> Result<Vec<ClientShard>> {
    if client_aps.is_empty() {
        return Err(Error::Dataset("no FL clients selected".into()));
    }
    let mut buckets: Vec<Vec<CsiSample>> = vec![Vec::new(); client_aps.len()];
    for s in &train.samples {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, ap) in client_aps.iter().enumerate() {
            let d = s
                .meta
                .position
                .horizontal_distance(topology.ap_pos[ap.index]);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        buckets[best].push(s.clone());
    }
    client_aps
        .iter()
        .zip(buckets)
        .map(|(ap, samples)| {
            if samples.is_empty() {
                return Err(Error::Dataset(format!(
                    "client {ap} received no training samples; use fewer FL clients"
                )));
            }
            Ok(ClientShard {
                client_ap: *ap,
                data: train.with_samples(SplitTag::Train, samples),
            })
        })
        .collect()
}
