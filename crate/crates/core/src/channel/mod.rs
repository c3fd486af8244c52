//! Frequency-selective link channels and the RIS-assisted effective channel.
//!
//! Every segment (AP-UE, RIS-UE, RIS-AP) is a single-cluster channel:
//! `amplitude * steering * H[f]`, where the amplitude comes from close-in
//! path loss with log-normal shadowing, the steering vectors from the
//! geometry (ULA at the AP, UPA at the RIS) and `H[f]` from a tapped delay
//! line sampled at the RB centres. The randomness of a segment is drawn from
//! the stream `fading:p{phase}:{link}`, so regenerating a link under the same
//! `(master_seed, phase_id, link)` is bitwise reproducible.

pub mod array;
pub mod fading;
pub mod propagation;

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scenario::{derive_stream, ScenarioConfig};
use crate::topology::{Point3, RisPanel, Topology};

pub use array::{ula_response, upa_response, AP_ARRAY_AXIS};
pub use fading::{frequency_response, small_scale_gain};
pub use propagation::{los_probability, PathLossModel};

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn column_energy(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.at(r, c).norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkId {
    ApUe { ap: usize, ue: usize },
    RisUe { ris: usize, ue: usize },
    RisAp { ris: usize, ap: usize },
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LinkId::ApUe { ap, ue } => write!(f, "ap{ap}-ue{ue}"),
            LinkId::RisUe { ris, ue } => write!(f, "ris{ris}-ue{ue}"),
            LinkId::RisAp { ris, ap } => write!(f, "ris{ris}-ap{ap}"),
        }
    }
}

pub fn fading_stream_id(phase_id: u32, link: LinkId) -> String {
    format!("fading:p{phase_id}:{link}")
}

/// The random part of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFading {
    pub los: bool,
    pub shadowing_db: f64,
    pub taps: Vec<Complex64>,
}

pub fn draw_segment_fading<R: Rng + ?Sized>(
    rng: &mut R,
    model: &PathLossModel,
    config: &ScenarioConfig,
    distance_m: f64,
) -> SegmentFading {
    let los = rng.random::<f64>() < model.los_probability(distance_m);
    let shadowing_db = model.sample_shadowing_db(rng, los);
    let taps = small_scale_gain(
        rng,
        los,
        model.k_factor_db,
        config.channel.n_taps,
        config.channel.tap_decay_db,
    );
    SegmentFading {
        los,
        shadowing_db,
        taps,
    }
}

/// Scalar part of a segment: amplitude and per-RB response.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub los: bool,
    pub path_loss_db: f64,
    pub amplitude: f64,
    pub response: Vec<Complex64>,
}

impl Segment {
    pub fn new(
        model: &PathLossModel,
        config: &ScenarioConfig,
        distance_m: f64,
        fading: &SegmentFading,
    ) -> Self {
        let path_loss_db = model.path_loss_db(distance_m, config.radio.carrier_ghz, fading.los)
            + fading.shadowing_db;
        Self {
            los: fading.los,
            path_loss_db,
            amplitude: 10f64.powf(-path_loss_db / 20.0),
            response: frequency_response(&fading.taps, config.radio.n_rb, config.radio.scs_khz),
        }
    }
}

/// Positions of the three endpoints of a RIS-assisted link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub ue: Point3,
    pub ap: Point3,
    pub ris: RisPanel,
}

/// One RIS-assisted link kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredLink {
    pub direct: Segment,
    pub ue_ris: Segment,
    pub ris_ap: Segment,
    /// AP steering towards the UE, length `N_t`.
    pub ap_to_ue: Vec<Complex64>,
    /// AP steering towards the RIS, length `N_t`.
    pub ap_to_ris: Vec<Complex64>,
    /// RIS steering towards the UE, length `N`.
    pub ris_to_ue: Vec<Complex64>,
    /// RIS steering towards the AP, length `N`.
    pub ris_to_ap: Vec<Complex64>,
}

impl FactoredLink {
    pub fn compose(
        model: &PathLossModel,
        config: &ScenarioConfig,
        geometry: &LinkGeometry,
        fading: [&SegmentFading; 3],
    ) -> Self {
        let LinkGeometry { ue, ap, ris } = *geometry;
        Self::from_segments(
            config,
            geometry,
            Segment::new(model, config, ap.distance(ue), fading[0]),
            Segment::new(model, config, ris.position.distance(ue), fading[1]),
            Segment::new(model, config, ris.position.distance(ap), fading[2]),
        )
    }

    pub fn from_segments(
        config: &ScenarioConfig,
        geometry: &LinkGeometry,
        direct: Segment,
        ue_ris: Segment,
        ris_ap: Segment,
    ) -> Self {
        let LinkGeometry { ue, ap, ris } = *geometry;
        let n_t = config.radio.ap_antennas;
        let (rows, cols) = (config.radio.ris_rows, config.radio.ris_cols);
        Self {
            direct,
            ue_ris,
            ris_ap,
            ap_to_ue: ula_response(n_t, ap.direction_to(ue), AP_ARRAY_AXIS),
            ap_to_ris: ula_response(n_t, ap.direction_to(ris.position), AP_ARRAY_AXIS),
            ris_to_ue: upa_response(rows, cols, ris.position.direction_to(ue), &ris),
            ris_to_ap: upa_response(rows, cols, ris.position.direction_to(ap), &ris),
        }
    }

    /// Materialise the dense tensors.
    pub fn dense(&self) -> LinkChannels {
        let n_t = self.ap_to_ue.len();
        let n = self.ris_to_ue.len();
        let f = self.direct.response.len();
        let mut h_dir = Vec::with_capacity(n_t * f);
        for a in &self.ap_to_ue {
            let s = a * self.direct.amplitude;
            h_dir.extend(self.direct.response.iter().map(|h| s * h));
        }
        let mut h_ue_ris = Vec::with_capacity(n * f);
        for a in &self.ris_to_ue {
            let s = a * self.ue_ris.amplitude;
            h_ue_ris.extend(self.ue_ris.response.iter().map(|h| s * h));
        }
        let mut g_ris_ap = Vec::with_capacity(n * n_t * f);
        for r in &self.ris_to_ap {
            let sr = r * self.ris_ap.amplitude;
            for t in &self.ap_to_ris {
                let s = sr * t;
                g_ris_ap.extend(self.ris_ap.response.iter().map(|h| s * h));
            }
        }
        LinkChannels {
            n_t,
            n,
            f,
            h_dir,
            h_ue_ris,
            g_ris_ap,
            los: [self.direct.los, self.ue_ris.los, self.ris_ap.los],
        }
    }

    /// The `N_t x F` effective channel, built from the factors without
    /// materialising the RIS-AP tensor.
    pub fn effective(&self, ris_cfg: &RisConfiguration) -> CMatrix {
        let beta: Complex64 = self
            .ris_to_ap
            .iter()
            .zip(&ris_cfg.theta)
            .zip(&self.ris_to_ue)
            .map(|((g, th), h)| g.conj() * Complex64::cis(*th) * h)
            .sum();
        let scale = self.ris_ap.amplitude * self.ue_ris.amplitude;
        let r: Vec<Complex64> = self
            .ris_ap
            .response
            .iter()
            .zip(&self.ue_ris.response)
            .map(|(g, h)| g.conj() * h * beta * scale)
            .collect();
        let f = r.len();
        let mut data = Vec::with_capacity(self.ap_to_ue.len() * f);
        for (x, y) in self.ap_to_ue.iter().zip(&self.ap_to_ris) {
            let xd = x * self.direct.amplitude;
            let yc = y.conj();
            data.extend(
                self.direct
                    .response
                    .iter()
                    .zip(&r)
                    .map(|(d, rv)| xd * d + yc * rv),
            );
        }
        CMatrix {
            rows: self.ap_to_ue.len(),
            cols: f,
            data,
        }
    }

    /// Per-bin `||h_eff[:, f]||^2` and `||G^H Theta h[:, f]||^2` (RIS path
    /// alone), evaluated in `O(N + N_t F)` from the factors.
    pub fn bin_gains(&self, ris_cfg: &RisConfiguration) -> (Vec<f64>, Vec<f64>) {
        let beta: Complex64 = self
            .ris_to_ap
            .iter()
            .zip(&ris_cfg.theta)
            .zip(&self.ris_to_ue)
            .map(|((g, th), h)| g.conj() * Complex64::cis(*th) * h)
            .sum();
        let x_energy: f64 =
            self.ap_to_ue.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.direct.amplitude.powi(2);
        let y_energy: f64 = self.ap_to_ris.iter().map(|v| v.norm_sqr()).sum();
        // <y, x> with y = conj(ap_to_ris), x = amplitude * ap_to_ue
        let cross: Complex64 = self
            .ap_to_ris
            .iter()
            .zip(&self.ap_to_ue)
            .map(|(y, x)| y * x)
            .sum::<Complex64>()
            * self.direct.amplitude;
        let scale = self.ris_ap.amplitude * self.ue_ris.amplitude;
        let mut total = Vec::with_capacity(self.direct.response.len());
        let mut ris_only = Vec::with_capacity(self.direct.response.len());
        for ((d, g), h) in self
            .direct
            .response
            .iter()
            .zip(&self.ris_ap.response)
            .zip(&self.ue_ris.response)
        {
            let r = g.conj() * h * beta * scale;
            let ris = r.norm_sqr() * y_energy;
            total.push(d.norm_sqr() * x_energy + ris + 2.0 * (d * r.conj() * cross).re);
            ris_only.push(ris);
        }
        (total, ris_only)
    }
}

/// Dense channel tensors of one UE-AP link assisted by one RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkChannels {
    pub n_t: usize,
    pub n: usize,
    pub f: usize,
    /// `N_t x F`, row-major.
    pub h_dir: Vec<Complex64>,
    /// `N x F`, row-major.
    pub h_ue_ris: Vec<Complex64>,
    /// `N x N_t x F`, row-major.
    pub g_ris_ap: Vec<Complex64>,
    /// LoS state of the direct, UE-RIS and RIS-AP segments.
    pub los: [bool; 3],
}

const DUMP_MAGIC: &[u8; 4] = b"LNK1";

impl LinkChannels {
    /// Scale the UE-side links (direct and UE-RIS); the effective channel is
    /// linear in these with the RIS-AP matrix held fixed.
    pub fn scaled(&self, a: Complex64) -> Self {
        let scale = |v: &[Complex64]| v.iter().map(|x| x * a).collect();
        Self {
            h_dir: scale(&self.h_dir),
            h_ue_ris: scale(&self.h_ue_ris),
            ..self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h_dir
            .iter()
            .chain(&self.h_ue_ris)
            .chain(&self.g_ris_ap)
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Debug dump: 16-byte header (`LNK1`, `N_t`, `N`, `F` as u32 LE) then
    /// `h_dir`, `h_ue_ris`, `g_ris_ap` as interleaved f64 LE pairs.
    pub fn to_debug_bytes(&self) -> Vec<u8> {
        let n_values = self.h_dir.len() + self.h_ue_ris.len() + self.g_ris_ap.len();
        let mut out = Vec::with_capacity(16 + n_values * 16);
        out.extend_from_slice(DUMP_MAGIC);
        for d in [self.n_t, self.n, self.f] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self
            .h_dir
            .iter()
            .chain(&self.h_ue_ris)
            .chain(&self.g_ris_ap)
        {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    pub fn from_debug_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
            return Err(Error::Format("not a link dump".into()));
        }
        let dim =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (n_t, n, f) = (dim(0), dim(1), dim(2));
        let counts = [n_t * f, n * f, n * n_t * f];
        let total: usize = counts.iter().sum();
        if bytes.len() != 16 + total * 16 {
            return Err(Error::Integrity(format!(
                "link dump holds {} bytes, dims need {}",
                bytes.len(),
                16 + total * 16
            )));
        }
        let mut values = bytes[16..].chunks_exact(16).map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        });
        let mut take = |k: usize| (&mut values).take(k).collect::<Vec<_>>();
        Ok(Self {
            n_t,
            n,
            f,
            h_dir: take(counts[0]),
            h_ue_ris: take(counts[1]),
            g_ris_ap: take(counts[2]),
            los: [false; 3],
        })
    }
}

/// Phase profile of one RIS panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfiguration {
    pub phase_id: u32,
    pub theta: Vec<f64>,
}

impl RisConfiguration {
    pub fn reflection(&self) -> Vec<Complex64> {
        self.theta.iter().map(|t| Complex64::cis(*t)).collect()
    }
}

/// `N` i.i.d. uniform phases in `[0, 2 pi)`.
pub fn random_ris_phases<R: Rng + ?Sized>(
    rng: &mut R,
    phase_id: u32,
    n: usize,
) -> RisConfiguration {
    RisConfiguration {
        phase_id,
        theta: (0..n).map(|_| rng.random_range(0.0..TAU)).collect(),
    }
}

pub fn phase_stream_id(phase_id: u32) -> String {
    format!("channel:phase_{phase_id}")
}

/// One configuration per RIS panel, drawn in panel order from
/// `channel:phase_{phase_id}`.
pub fn ris_profile(config: &ScenarioConfig, phase_id: u32) -> Vec<RisConfiguration> {
    let mut rng = derive_stream(config, &phase_stream_id(phase_id)).rng();
    (0..config.topology.n_ris)
        .map(|_| random_ris_phases(&mut rng, phase_id, config.n_ris_elements()))
        .collect()
}

/// `h_eff[:, f] = h_dir[:, f] + G[:, :, f]^H diag(e^{j theta}) h_ue_ris[:, f]`.
pub fn effective_channel(link: &LinkChannels, ris_cfg: &RisConfiguration) -> Result<CMatrix> {
    let (n_t, n, f) = (link.n_t, link.n, link.f);
    if link.h_dir.len() != n_t * f
        || link.h_ue_ris.len() != n * f
        || link.g_ris_ap.len() != n * n_t * f
        || ris_cfg.theta.len() != n
    {
        return Err(Error::Integrity(format!(
            "effective channel dims: N_t={n_t} N={n} F={f}, h_dir {}, h_ue_ris {}, G {}, theta {}",
            link.h_dir.len(),
            link.h_ue_ris.len(),
            link.g_ris_ap.len(),
            ris_cfg.theta.len()
        )));
    }
    let mut out = CMatrix {
        rows: n_t,
        cols: f,
        data: link.h_dir.clone(),
    };
    let mut weighted = vec![Complex64::new(0.0, 0.0); f];
    for (el, coeff) in ris_cfg.reflection().into_iter().enumerate() {
        for (w, h) in weighted
            .iter_mut()
            .zip(&link.h_ue_ris[el * f..(el + 1) * f])
        {
            *w = coeff * h;
        }
        let g_el = &link.g_ris_ap[el * n_t * f..(el + 1) * n_t * f];
        for (row, g_row) in out.data.chunks_exact_mut(f).zip(g_el.chunks_exact(f)) {
            for ((o, g), w) in row.iter_mut().zip(g_row).zip(&weighted) {
                *o += g.conj() * w;
            }
        }
    }
    Ok(out)
}

/// Every segment of a `(topology, phase)` realisation, generated once.
#[derive(Debug, Clone)]
pub struct ChannelField<'a> {
    pub config: &'a ScenarioConfig,
    pub topology: &'a Topology,
    pub phase_id: u32,
    direct: Vec<Segment>,
    ue_ris: Vec<Segment>,
    ris_ap: Vec<Segment>,
}

impl<'a> ChannelField<'a> {
    pub fn generate(config: &'a ScenarioConfig, topology: &'a Topology, phase_id: u32) -> Self {
        let model = PathLossModel::from(&config.channel);
        let seg = |link: LinkId, d: f64| {
            let mut rng = derive_stream(config, &fading_stream_id(phase_id, link)).rng();
            let fading = draw_segment_fading(&mut rng, &model, config, d);
            Segment::new(&model, config, d, &fading)
        };
        let (n_ap, n_ris) = (topology.n_ap(), topology.n_ris());
        let mut direct = Vec::with_capacity(topology.n_ue() * n_ap);
        let mut ue_ris = Vec::with_capacity(topology.n_ue() * n_ris);
        for (ue, p) in topology.ue_pos.iter().enumerate() {
            for (ap, q) in topology.ap_pos.iter().enumerate() {
                direct.push(seg(LinkId::ApUe { ap, ue }, p.distance(*q)));
            }
            for (ris, r) in topology.ris.iter().enumerate() {
                ue_ris.push(seg(LinkId::RisUe { ris, ue }, p.distance(r.position)));
            }
        }
        let mut ris_ap = Vec::with_capacity(n_ris * n_ap);
        for (ris, r) in topology.ris.iter().enumerate() {
            for (ap, q) in topology.ap_pos.iter().enumerate() {
                ris_ap.push(seg(LinkId::RisAp { ris, ap }, r.position.distance(*q)));
            }
        }
        Self {
            config,
            topology,
            phase_id,
            direct,
            ue_ris,
            ris_ap,
        }
    }

    pub fn factored_link(&self, ue: usize, ap: usize, ris: usize) -> FactoredLink {
        let (n_ap, n_ris) = (self.topology.n_ap(), self.topology.n_ris());
        let geometry = LinkGeometry {
            ue: self.topology.ue_pos[ue],
            ap: self.topology.ap_pos[ap],
            ris: self.topology.ris[ris],
        };
        FactoredLink::from_segments(
            self.config,
            &geometry,
            self.direct[ue * n_ap + ap].clone(),
            self.ue_ris[ue * n_ris + ris].clone(),
            self.ris_ap[ris * n_ap + ap].clone(),
        )
    }
}

/// Dense channels of one link, regenerated from its fading streams.
pub fn gen_link_channels(
    config: &ScenarioConfig,
    topology: &Topology,
    phase_id: u32,
    ue: usize,
    ap: usize,
    ris: usize,
) -> LinkChannels {
    let model = PathLossModel::from(&config.channel);
    let geometry = LinkGeometry {
        ue: topology.ue_pos[ue],
        ap: topology.ap_pos[ap],
        ris: topology.ris[ris],
    };
    let draw = |link: LinkId, d: f64| {
        let mut rng = derive_stream(config, &fading_stream_id(phase_id, link)).rng();
        draw_segment_fading(&mut rng, &model, config, d)
    };
    let fd = draw(LinkId::ApUe { ap, ue }, geometry.ap.distance(geometry.ue));
    let fh = draw(
        LinkId::RisUe { ris, ue },
        geometry.ris.position.distance(geometry.ue),
    );
    let fg = draw(
        LinkId::RisAp { ris, ap },
        geometry.ris.position.distance(geometry.ap),
    );
    FactoredLink::compose(&model, config, &geometry, [&fd, &fh, &fg]).dense()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::derive_stream;
    use crate::topology::place_entities;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_link(rng: &mut ChaCha8Rng, n_t: usize, n: usize, f: usize) -> LinkChannels {
        let mut draw = |k: usize| {
            (0..k)
                .map(|_| fading::complex_normal(rng))
                .collect::<Vec<_>>()
        };
        LinkChannels {
            n_t,
            n,
            f,
            h_dir: draw(n_t * f),
            h_ue_ris: draw(n * f),
            g_ris_ap: draw(n * n_t * f),
            los: [false; 3],
        }
    }

    /// Element-wise triple loop over antennas, bins and RIS elements.
    fn oracle(link: &LinkChannels, theta: &[f64]) -> Vec<Complex64> {
        let (n_t, n, f) = (link.n_t, link.n, link.f);
        let mut out = vec![c(0.0, 0.0); n_t * f];
        for t in 0..n_t {
            for k in 0..f {
                let mut acc = link.h_dir[t * f + k];
                for e in 0..n {
                    let g = link.g_ris_ap[(e * n_t + t) * f + k];
                    let phase = c(theta[e].cos(), theta[e].sin());
                    acc += g.conj() * phase * link.h_ue_ris[e * f + k];
                }
                out[t * f + k] = acc;
            }
        }
        out
    }

    #[test]
    fn zero_g_leaves_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut link = random_link(&mut rng, 3, 5, 4);
        link.g_ris_ap.iter_mut().for_each(|g| *g = c(0.0, 0.0));
        let cfg = random_ris_phases(&mut rng, 0, 5);
        assert_eq!(effective_channel(&link, &cfg).unwrap().data, link.h_dir);
    }

    #[test]
    fn destructive_interference_identity() {
        let link = LinkChannels {
            n_t: 1,
            n: 1,
            f: 1,
            h_dir: vec![c(1.0, 0.0)],
            h_ue_ris: vec![c(1.0, 0.0)],
            g_ris_ap: vec![c(1.0, 0.0)],
            los: [true; 3],
        };
        let cfg = RisConfiguration {
            phase_id: 0,
            theta: vec![std::f64::consts::PI],
        };
        let h = effective_channel(&link, &cfg).unwrap();
        assert!(h.data[0].norm() < 1e-15);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let link = random_link(&mut rng, 2, 4, 3);
        let cfg = random_ris_phases(&mut rng, 0, 4);
        let fast = effective_channel(&link, &cfg).unwrap();
        for (a, b) in fast.data.iter().zip(oracle(&link, &cfg.theta)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut link = random_link(&mut rng, 2, 4, 3);
        let cfg = random_ris_phases(&mut rng, 0, 3);
        assert!(matches!(
            effective_channel(&link, &cfg),
            Err(Error::Integrity(_))
        ));
        link.g_ris_ap.pop();
        let cfg = random_ris_phases(&mut rng, 0, 4);
        assert!(matches!(
            effective_channel(&link, &cfg),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn effective_channel_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let link = random_link(&mut rng, 3, 6, 2);
        let cfg = random_ris_phases(&mut rng, 0, 6);
        let a = c(-0.7, 1.3);
        let lhs = effective_channel(&link.scaled(a), &cfg).unwrap();
        let rhs = effective_channel(&link, &cfg).unwrap();
        for (l, r) in lhs.data.iter().zip(&rhs.data) {
            assert!((l - r * a).norm() < 1e-12);
        }
    }

    #[test]
    fn phases_are_deterministic_and_separated() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ris_profile(&cfg, 3), ris_profile(&cfg, 3));
        assert_ne!(ris_profile(&cfg, 3)[0].theta, ris_profile(&cfg, 4)[0].theta);
        for r in ris_profile(&cfg, 3)[0].reflection() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_phases_are_uniform() {
        let cfg = ScenarioConfig::default();
        let mut pooled = Vec::new();
        for p in 0..500 {
            pooled.extend(ris_profile(&cfg, p).into_iter().flat_map(|r| r.theta));
        }
        let pooled = &pooled[..100_000];
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        assert!((mean - std::f64::consts::PI).abs() < 0.01 * std::f64::consts::PI);
        // Rayleigh test: p ~ exp(-n R^2); reject uniformity when p < 0.01.
        let (s, c): (f64, f64) = pooled
            .iter()
            .fold((0.0, 0.0), |(s, c), t| (s + t.sin(), c + t.cos()));
        let n = pooled.len() as f64;
        let r_bar = (s * s + c * c).sqrt() / n;
        let p = (-n * r_bar * r_bar).exp();
        assert!(p > 0.01, "Rayleigh p = {p}");
        assert!(pooled.iter().all(|t| (0.0..TAU).contains(t)));
    }

    #[test]
    fn applying_theta_preserves_element_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let link = random_link(&mut rng, 1, 8, 3);
        let cfg = random_ris_phases(&mut rng, 0, 8);
        for (e, coeff) in cfg.reflection().iter().enumerate() {
            for k in 0..3 {
                let h = link.h_ue_ris[e * 3 + k];
                assert!(((coeff * h).norm() - h.norm()).abs() < 1e-12);
            }
        }
    }

    fn small_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.topology.n_ue = 12;
        cfg
    }

    #[test]
    fn factored_route_matches_dense_route() {
        let cfg = small_config();
        let topo = place_entities(&cfg, &derive_stream(&cfg, "topology")).unwrap();
        let field = ChannelField::generate(&cfg, &topo, 2);
        let profile = ris_profile(&cfg, 2);
        for (ue, ap, ris) in [(0, 0, 0), (3, 7, 1), (11, 17, 2), (5, 2, 2)] {
            let fl = field.factored_link(ue, ap, ris);
            let dense = fl.dense();
            assert_eq!(dense, gen_link_channels(&cfg, &topo, 2, ue, ap, ris));
            let heff = effective_channel(&dense, &profile[ris]).unwrap();
            let (total, ris_only) = fl.bin_gains(&profile[ris]);
            let fast = fl.effective(&profile[ris]);
            assert_eq!((fast.rows, fast.cols), (heff.rows, heff.cols));
            let peak = heff.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in fast.data.iter().zip(&heff.data) {
                assert!((a - b).norm() <= 1e-12 * peak, "{a} vs {b}");
            }
            let ris_path = effective_channel(
                &LinkChannels {
                    h_dir: vec![c(0.0, 0.0); dense.h_dir.len()],
                    ..dense.clone()
                },
                &profile[ris],
            )
            .unwrap();
            for k in 0..dense.f {
                let e = heff.column_energy(k);
                assert!((total[k] - e).abs() <= 1e-12 * e, "{} vs {e}", total[k]);
                let r = ris_path.column_energy(k);
                assert!(
                    (ris_only[k] - r).abs() <= 1e-10 * r.max(1e-300),
                    "{} vs {r}",
                    ris_only[k]
                );
            }
        }
    }

    #[test]
    fn link_generation_is_deterministic_and_finite() {
        let cfg = small_config();
        let topo = place_entities(&cfg, &derive_stream(&cfg, "topology")).unwrap();
        let a = gen_link_channels(&cfg, &topo, 1, 4, 5, 0);
        let b = gen_link_channels(&cfg, &topo, 1, 4, 5, 0);
        assert_eq!(a.to_debug_bytes(), b.to_debug_bytes());
        assert!(a.is_finite());
        assert_eq!((a.n_t, a.n, a.f), (32, 200, 60));
        assert_ne!(a, gen_link_channels(&cfg, &topo, 2, 4, 5, 0));
    }

    #[test]
    fn broadside_direct_channel_has_flat_array_phase() {
        let cfg = ScenarioConfig::default();
        let model = PathLossModel::default();
        let geometry = LinkGeometry {
            ue: Point3::new(10.0, 30.0, 8.0),
            ap: Point3::new(10.0, 10.0, 8.0),
            ris: RisPanel {
                position: Point3::new(0.0, 20.0, 4.0),
                normal: Point3::new(1.0, 0.0, 0.0),
                tangent: Point3::new(0.0, -1.0, 0.0),
            },
        };
        let fading = SegmentFading {
            los: true,
            shadowing_db: 0.0,
            taps: vec![c(1.0, 0.0)],
        };
        let link = FactoredLink::compose(&model, &cfg, &geometry, [&fading, &fading, &fading]);
        assert!(link.ap_to_ue.iter().all(|v| *v == c(1.0, 0.0)));
    }

    #[test]
    fn doubling_distances_scales_by_path_loss_slope() {
        let cfg = ScenarioConfig::default();
        let model = PathLossModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let panel = RisPanel {
            position: Point3::new(0.0, 20.0, 4.0),
            normal: Point3::new(1.0, 0.0, 0.0),
            tangent: Point3::new(0.0, -1.0, 0.0),
        };
        let geometry = LinkGeometry {
            ue: Point3::new(30.0, 25.0, 1.5),
            ap: Point3::new(10.0, 10.0, 8.0),
            ris: panel,
        };
        let doubled = LinkGeometry {
            ue: geometry.ue.scale(2.0),
            ap: geometry.ap.scale(2.0),
            ris: RisPanel {
                position: panel.position.scale(2.0),
                ..panel
            },
        };
        let fd: Vec<SegmentFading> = (0..3)
            .map(|_| draw_segment_fading(&mut rng, &model, &cfg, 20.0))
            .collect();
        let near = FactoredLink::compose(&model, &cfg, &geometry, [&fd[0], &fd[1], &fd[2]]).dense();
        let far = FactoredLink::compose(&model, &cfg, &doubled, [&fd[0], &fd[1], &fd[2]]).dense();
        // Independent recomputation of the loss increase for the direct segment.
        let n = model.exponent(fd[0].los);
        let d = geometry.ap.distance(geometry.ue);
        let delta_db = 10.0 * n * (2.0 * d).log10() - 10.0 * n * d.log10();
        let expected = 10f64.powf(-delta_db / 20.0);
        for (a, b) in far.h_dir.iter().zip(&near.h_dir) {
            assert!((a.norm() / b.norm() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_energy_matches_path_loss_on_average() {
        let cfg = ScenarioConfig::default();
        let model = PathLossModel {
            shadowing_los_db: 0.0,
            shadowing_nlos_db: 0.0,
            ..PathLossModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 40.0;
        let draws = 10_000;
        let mut ratio_sum = 0.0;
        for _ in 0..draws {
            let fading = draw_segment_fading(&mut rng, &model, &cfg, d);
            let seg = Segment::new(&model, &cfg, d, &fading);
            let pl_lin =
                10f64.powf(-model.path_loss_db(d, cfg.radio.carrier_ghz, fading.los) / 10.0);
            let steering = ula_response(32, Point3::new(0.6, 0.8, 0.0), AP_ARRAY_AXIS);
            let energy: f64 = steering.iter().map(|a| a.norm_sqr()).sum::<f64>()
                * seg.amplitude.powi(2)
                * seg.response.iter().map(|h| h.norm_sqr()).sum::<f64>()
                / seg.response.len() as f64;
            ratio_sum += energy / (32.0 * pl_lin);
        }
        let mean = ratio_sum / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn debug_dump_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let link = random_link(&mut rng, 2, 3, 4);
        let bytes = link.to_debug_bytes();
        assert_eq!(bytes.len(), 16 + (8 + 12 + 24) * 16);
        let back = LinkChannels::from_debug_bytes(&bytes).unwrap();
        assert_eq!(back.g_ris_ap, link.g_ris_ap);
        assert!(LinkChannels::from_debug_bytes(&bytes[..40]).is_err());
    }
}
