//! SINR under maximal-ratio combining, per-user secrecy rate and the
//! system average secrecy rate.

use crate::channel::CMatrix;
use crate::scenario::{dbm_to_mw, WidebandMean};
use crate::topology::NodeId;

/// Per-bin and wideband SINR (linear).
#[derive(Debug, Clone, PartialEq)]
pub struct Sinr {
    pub per_bin: Vec<f64>,
    pub wideband: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrRecord {
    pub ue: NodeId,
    pub ap: NodeId,
    pub sinr: f64,
}

pub fn wideband(per_bin: &[f64], mean: WidebandMean) -> f64 {
    if per_bin.is_empty() {
        return 0.0;
    }
    let n = per_bin.len() as f64;
    match mean {
        WidebandMean::Arithmetic => per_bin.iter().sum::<f64>() / n,
        WidebandMean::Geometric => {
            if per_bin.iter().any(|v| *v <= 0.0) {
                0.0
            } else {
                (per_bin.iter().map(|v| v.ln()).sum::<f64>() / n).exp()
            }
        }
    }
}

/// `SINR_f = p ||h_eff[:, f]||^2 / sigma^2` per bin. Uplink sounding is
/// orthogonally scheduled, so there is no interference term.
pub fn sinr(h_eff: &CMatrix, p_tx_dbm: f64, noise_dbm: f64, mean: WidebandMean) -> Sinr {
    let per_bin: Vec<f64> = (0..h_eff.cols).map(|f| h_eff.column_energy(f)).collect();
    sinr_from_gains(&per_bin, p_tx_dbm, noise_dbm, mean)
}

/// Same as [`sinr`] from precomputed per-bin channel energies.
pub fn sinr_from_gains(gains: &[f64], p_tx_dbm: f64, noise_dbm: f64, mean: WidebandMean) -> Sinr {
    let snr0 = dbm_to_mw(p_tx_dbm) / dbm_to_mw(noise_dbm);
    let per_bin: Vec<f64> = gains.iter().map(|g| snr0 * g).collect();
    let wideband = wideband(&per_bin, mean);
    Sinr { per_bin, wideband }
}

pub fn capacity(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// `[log2(1 + SINR_l) - log2(1 + SINR_e)]^+` in bps/Hz.
pub fn secrecy_rate(sinr_l: f64, sinr_e: f64) -> f64 {
    (capacity(sinr_l) - capacity(sinr_e)).max(0.0)
}

/// For each legitimate record, the index of the eavesdropper record at the
/// same AP with the highest SINR (lowest index on ties). Records of the same
/// UE are never paired with each other.
pub fn worst_case_pairing(legit: &[SinrRecord], eves: &[SinrRecord]) -> Vec<Option<usize>> {
    legit
        .iter()
        .map(|l| {
            let mut best: Option<usize> = None;
            for (j, e) in eves.iter().enumerate() {
                if e.ap != l.ap || e.ue == l.ue {
                    continue;
                }
                if best.is_none_or(|b| e.sinr > eves[b].sinr) {
                    best = Some(j);
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecrecyReport {
    /// SR per legitimate record, in input order.
    pub sr_per_user: Vec<f64>,
    pub pairing: Vec<Option<usize>>,
    pub asr: f64,
}

/// Sum of all per-AP secrecy rates divided by the AP count; with
/// `n_legit = Some(n)` additionally divided by `n`.
pub fn average_secrecy_rate(sr_by_ap: &[Vec<f64>], n_ap: usize, n_legit: Option<usize>) -> f64 {
    let total: f64 = sr_by_ap.iter().flatten().sum();
    let mut asr = total / n_ap as f64;
    if let Some(n) = n_legit.filter(|n| *n > 0) {
        asr /= n as f64;
    }
    asr
}

/// Pair every legitimate record with its worst-case eavesdropper and
/// aggregate. A user with no eavesdropper at its AP keeps its full capacity.
pub fn secrecy_report(
    legit: &[SinrRecord],
    eves: &[SinrRecord],
    n_ap: usize,
    normalize_by_users: bool,
) -> SecrecyReport {
    let pairing = worst_case_pairing(legit, eves);
    let sr_per_user: Vec<f64> = legit
        .iter()
        .zip(&pairing)
        .map(|(l, p)| match p {
            Some(j) => secrecy_rate(l.sinr, eves[*j].sinr),
            None => capacity(l.sinr),
        })
        .collect();
    let mut by_ap = vec![Vec::new(); n_ap];
    for (l, sr) in legit.iter().zip(&sr_per_user) {
        by_ap[l.ap.index].push(*sr);
    }
    let asr = average_secrecy_rate(&by_ap, n_ap, normalize_by_users.then_some(legit.len()));
    SecrecyReport {
        sr_per_user,
        pairing,
        asr,
    }
}
