//! One Monte-Carlo realisation of the network: RIS phases, channels,
//! association and the resulting per-link SINRs.

use crate::channel::{ris_profile, ChannelField, RisConfiguration};
use crate::error::Result;
use crate::scenario::{noise_power_dbm, ScenarioConfig};
use crate::secrecy::{secrecy_report, sinr_from_gains, SecrecyReport, SinrRecord};
use crate::topology::{associate, to_db, Association, NodeId, SnrTable, Topology};

#[derive(Debug, Clone)]
pub struct PhaseRealization {
    pub phase_id: u32,
    pub ris: Vec<RisConfiguration>,
    /// Wideband uplink SINR per `[ue][ap][ris]` including each UE's power.
    pub table: SnrTable,
    pub association: Association,
}

/// Build the SINR table for every UE-AP-RIS triple of a phase.
pub fn snr_table(
    config: &ScenarioConfig,
    field: &ChannelField<'_>,
    ris: &[RisConfiguration],
) -> SnrTable {
    let topo = field.topology;
    let noise = noise_power_dbm(config);
    let mean = config.secrecy.wideband_mean;
    let mut table = SnrTable::new(topo.n_ue(), topo.n_ap(), topo.n_ris());
    for ue in 0..topo.n_ue() {
        let p = topo.ue_power_dbm[ue];
        for ap in 0..topo.n_ap() {
            for (r, cfg) in ris.iter().enumerate() {
                let (total, ris_only) = field.factored_link(ue, ap, r).bin_gains(cfg);
                let i = table.idx(ue, ap, r);
                table.effective[i] = sinr_from_gains(&total, p, noise, mean).wideband;
                table.ris_path[i] = sinr_from_gains(&ris_only, p, noise, mean).wideband;
            }
        }
    }
    table
}

impl PhaseRealization {
    pub fn realize(config: &ScenarioConfig, topology: &Topology, phase_id: u32) -> Result<Self> {
        Self::realize_with(&ChannelField::generate(config, topology, phase_id))
    }

    /// Realise from an already generated channel field.
    pub fn realize_with(field: &ChannelField<'_>) -> Result<Self> {
        let ris = ris_profile(field.config, field.phase_id);
        let table = snr_table(field.config, field, &ris);
        let association = associate(field.topology, &table)?;
        Ok(Self {
            phase_id: field.phase_id,
            ris,
            table,
            association,
        })
    }

    /// SINR of a UE's dataset channel: serving AP through serving RIS.
    pub fn serving_sinr(&self, ue: usize) -> f64 {
        let a = self.association.serving_ap[ue].index;
        let r = self.association.serving_ris[ue].index;
        self.table.effective_at(ue, a, r)
    }

    /// Best SINR a UE reaches at `ap` through any RIS.
    pub fn best_sinr(&self, ue: usize, ap: usize) -> f64 {
        (0..self.table.n_ris)
            .map(|r| self.table.effective_at(ue, ap, r))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Legitimate records (true legitimate UEs at their serving AP) and
    /// adversary records (flagged UEs towards every AP).
    pub fn records(
        &self,
        topology: &Topology,
        adversary: &[bool],
    ) -> (Vec<SinrRecord>, Vec<SinrRecord>) {
        let legit = (0..topology.n_ue())
            .filter(|u| !topology.ue_is_eve[*u])
            .map(|u| SinrRecord {
                ue: NodeId::ue(u),
                ap: self.association.serving_ap[u],
                sinr: self.serving_sinr(u),
            })
            .collect();
        let eves = (0..topology.n_ue())
            .filter(|u| adversary[*u])
            .flat_map(|u| {
                (0..topology.n_ap()).map(move |a| SinrRecord {
                    ue: NodeId::ue(u),
                    ap: NodeId::ap(a),
                    sinr: self.best_sinr(u, a),
                })
            })
            .collect();
        (legit, eves)
    }

    pub fn secrecy(
        &self,
        config: &ScenarioConfig,
        topology: &Topology,
        adversary: &[bool],
    ) -> SecrecyOutcome {
        let (legit, eves) = self.records(topology, adversary);
        let report = secrecy_report(
            &legit,
            &eves,
            topology.n_ap(),
            config.secrecy.normalize_by_users,
        );
        SecrecyOutcome {
            phase_id: self.phase_id,
            legit,
            eves,
            report,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SecrecyOutcome {
    pub phase_id: u32,
    pub legit: Vec<SinrRecord>,
    pub eves: Vec<SinrRecord>,
    pub report: SecrecyReport,
}

impl SecrecyOutcome {
    /// `phase_id,ue,serving_ap,paired_eve,sinr_l_db,sinr_e_db,sr_bpshz`; the
    /// eavesdropper columns are empty for unpaired users.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("phase_id,ue,serving_ap,paired_eve,sinr_l_db,sinr_e_db,sr_bpshz\n");
        for ((l, pair), sr) in self
            .legit
            .iter()
            .zip(&self.report.pairing)
            .zip(&self.report.sr_per_user)
        {
            let (eve, eve_db) = match pair {
                Some(j) => (
                    self.eves[*j].ue.index.to_string(),
                    format!("{:.6}", to_db(self.eves[*j].sinr)),
                ),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{:.6}\n",
                self.phase_id,
                l.ue.index,
                l.ap.index,
                eve,
                to_db(l.sinr),
                eve_db,
                sr
            ));
        }
        out
    }
}
