//! Synchronous FedAvg over AP clients.
//!
//! Clients sit behind [`Client`], which exchanges encoded bytes only: the
//! server sends a round request (global weights and the local schedule) and
//! receives a [`ClientUpdate`]. Weights travel through the checkpoint codec
//! at full precision.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::checkpoint::{decode, encode, Checkpoint, Precision};
use crate::nn::{evaluate, train_local, Arch, LabeledSet, Metrics, ModelParams, TrainOptions};
use crate::scenario::{derive_seeded, derive_stream, ScenarioConfig};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_ap: NodeId,
    pub params: ModelParams,
    pub n_samples: usize,
    pub round: usize,
    pub mean_loss: f64,
}

/// What the server broadcasts each round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRequest {
    pub round: usize,
    pub global: ModelParams,
    pub opts: TrainOptions,
}

fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    encode(
        &Checkpoint {
            params: params.clone(),
            extras: Vec::new(),
        },
        Precision::F64,
    )
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; N]> {
    let s = bytes
        .get(*at..*at + N)
        .ok_or_else(|| Error::Integrity("federated message truncated".into()))?;
    *at += N;
    Ok(s.try_into().expect("length checked"))
}

impl RoundRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [
            self.round as u64,
            self.opts.epochs as u64,
            self.opts.batch_size as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.opts.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.opts.lambda_aux.to_le_bytes());
        out.extend_from_slice(&checkpoint_bytes(&self.global));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut at = 0;
        let round = u64::from_le_bytes(take(bytes, &mut at)?) as usize;
        let epochs = u64::from_le_bytes(take(bytes, &mut at)?) as usize;
        let batch_size = u64::from_le_bytes(take(bytes, &mut at)?) as usize;
        let learning_rate = f64::from_le_bytes(take(bytes, &mut at)?);
        let lambda_aux = f64::from_le_bytes(take(bytes, &mut at)?);
        let global = decode(&bytes[at..])?.params;
        Ok(Self {
            round,
            global,
            opts: TrainOptions {
                epochs,
                batch_size,
                learning_rate,
                lambda_aux,
            },
        })
    }
}

impl ClientUpdate {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.client_ap.index as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_samples as u64).to_le_bytes());
        out.extend_from_slice(&(self.round as u64).to_le_bytes());
        out.extend_from_slice(&self.mean_loss.to_le_bytes());
        out.extend_from_slice(&checkpoint_bytes(&self.params));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut at = 0;
        let ap = u64::from_le_bytes(take(bytes, &mut at)?) as usize;
        let n_samples = u64::from_le_bytes(take(bytes, &mut at)?) as usize;
        let round = u64::from_le_bytes(take(bytes, &mut at)?) as usize;
        let mean_loss = f64::from_le_bytes(take(bytes, &mut at)?);
        let params = decode(&bytes[at..])?.params;
        Ok(Self {
            client_ap: NodeId::ap(ap),
            params,
            n_samples,
            round,
            mean_loss,
        })
    }
}

/// A federated participant. Only encoded requests go in and encoded
/// updates come out.
pub trait Client: Send + Sync {
    fn id(&self) -> NodeId;
    fn handle(&self, request: &[u8]) -> Result<Vec<u8>>;
}

/// In-process client training on its own shard.
pub struct LocalClient {
    client_ap: NodeId,
    shard: LabeledSet,
    master_seed: u64,
}

impl LocalClient {
    pub fn new(client_ap: NodeId, shard: LabeledSet, master_seed: u64) -> Self {
        Self {
            client_ap,
            shard,
            master_seed,
        }
    }
}

pub fn shuffle_stream_id(round: usize) -> String {
    format!("shuffle:round_{round}")
}

impl Client for LocalClient {
    fn id(&self) -> NodeId {
        self.client_ap
    }

    fn handle(&self, request: &[u8]) -> Result<Vec<u8>> {
        let req = RoundRequest::decode(request)?;
        let mut rng = derive_seeded(self.master_seed, &shuffle_stream_id(req.round)).rng();
        let (params, history) = train_local(&req.global, &self.shard, &req.opts, &mut rng)?;
        let update = ClientUpdate {
            client_ap: self.client_ap,
            params,
            n_samples: self.shard.len(),
            round: req.round,
            mean_loss: history.last().copied().unwrap_or(f64::NAN),
        };
        Ok(update.encode())
    }
}

/// Sample-weighted average, `w_ref + sum_k (n_k / N)(w_k - w_ref)` with
/// `w_ref` the update of the lowest client id. Updates are ordered by
/// client id first, so the result does not depend on arrival order, and
/// identical inputs come back unchanged.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::Integrity("no client updates to aggregate".into()));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_ap);
    if let Some(w) = sorted.windows(2).find(|w| w[0].client_ap == w[1].client_ap) {
        return Err(Error::Integrity(format!(
            "duplicate update from {}",
            w[0].client_ap
        )));
    }
    let reference = &sorted[0].params;
    for u in &sorted {
        if u.n_samples == 0 {
            return Err(Error::Integrity(format!(
                "update from {} has no samples",
                u.client_ap
            )));
        }
        let same_keys = u
            .params
            .named()
            .zip(reference.named())
            .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape());
        if u.params.arch != reference.arch || !same_keys {
            return Err(Error::Integrity(format!(
                "parameters from {} do not match the global model",
                u.client_ap
            )));
        }
    }
    let total: usize = sorted.iter().map(|u| u.n_samples).sum();
    let mut out = reference.clone();
    for (ti, t) in out.tensors_mut().iter_mut().enumerate() {
        let base = reference.tensors()[ti].data();
        for (j, v) in t.data_mut().iter_mut().enumerate() {
            let mut delta = 0.0;
            for u in &sorted {
                let wk = u.n_samples as f64 / total as f64;
                delta += wk * (u.params.tensors()[ti].data()[j] - base[j]);
            }
            *v = base[j] + delta;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientLog {
    pub client: String,
    pub n_samples: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientLog>,
    pub test: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub global: ModelParams,
    pub history: Vec<RoundRecord>,
    pub opts: TrainOptions,
}

impl RoundState {
    pub fn new(global: ModelParams, opts: TrainOptions) -> Self {
        Self {
            round: 0,
            global,
            history: Vec::new(),
            opts,
        }
    }
}

/// Broadcast, train every client, aggregate. Clients may run concurrently;
/// updates are collected in client order. On any failure the state is left
/// untouched.
pub fn run_round(
    state: &mut RoundState,
    clients: &[Box<dyn Client>],
    test: Option<&LabeledSet>,
) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::Dataset("a round needs at least one client".into()));
    }
    let request = RoundRequest {
        round: state.round,
        global: state.global.clone(),
        opts: state.opts,
    }
    .encode();
    let replies: Vec<Result<Vec<u8>>> = clients.par_iter().map(|c| c.handle(&request)).collect();
    let mut updates = Vec::with_capacity(clients.len());
    for (c, reply) in clients.iter().zip(replies) {
        let update = ClientUpdate::decode(&reply?)?;
        if update.client_ap != c.id() || update.round != state.round {
            return Err(Error::Integrity(format!(
                "unexpected update from {}",
                c.id()
            )));
        }
        updates.push(update);
    }
    let global = fedavg_aggregate(&updates)?;
    let metrics = test.map(|t| evaluate(&global, t, None)).transpose()?;
    state.history.push(RoundRecord {
        round: state.round,
        clients: updates
            .iter()
            .map(|u| ClientLog {
                client: u.client_ap.to_string(),
                n_samples: u.n_samples,
                mean_loss: u.mean_loss,
            })
            .collect(),
        test: metrics,
    });
    state.global = global;
    state.round += 1;
    Ok(())
}

pub fn train_options(config: &ScenarioConfig) -> TrainOptions {
    TrainOptions {
        epochs: config.training.local_epochs,
        batch_size: config.training.batch_size,
        learning_rate: config.training.learning_rate,
        lambda_aux: config.training.lambda_aux,
    }
}

/// Initial global weights from the `init` stream.
pub fn initial_params(config: &ScenarioConfig, arch: Arch) -> ModelParams {
    ModelParams::init(arch, &mut derive_stream(config, "init").rng())
}

/// APs that train: the selected clients, plus the aggregating AP when it
/// is configured to train as well.
pub fn training_clients(config: &ScenarioConfig, topology: &Topology) -> Vec<NodeId> {
    let mut ids = crate::topology::select_fl_clients(
        topology,
        config.topology.n_fl_clients,
        config.topology.client_alpha,
    );
    if config.training.aggregator_trains {
        let central = topology.central_ap();
        if !ids.contains(&central) {
            ids.push(central);
            ids.sort();
        }
    }
    ids
}

/// `R` synchronous rounds from the seeded initial weights.
pub fn run_training(
    config: &ScenarioConfig,
    arch: Arch,
    clients: &[Box<dyn Client>],
    test: Option<&LabeledSet>,
) -> Result<(ModelParams, Vec<RoundRecord>)> {
    let mut state = RoundState::new(initial_params(config, arch), train_options(config));
    for _ in 0..config.training.rounds {
        run_round(&mut state, clients, test)?;
    }
    Ok((state.global, state.history))
}

#[derive(Serialize)]
struct LogLine<'a> {
    round: usize,
    client: &'a str,
    n_samples: usize,
    mean_loss: f64,
    global_accuracy: Option<f64>,
}

/// One JSON object per client per round.
pub fn round_log(history: &[RoundRecord]) -> String {
    let mut out = String::new();
    for rec in history {
        for c in &rec.clients {
            let line = LogLine {
                round: rec.round,
                client: &c.client,
                n_samples: c.n_samples,
                mean_loss: c.mean_loss,
                global_accuracy: rec.test.as_ref().map(|m| m.accuracy),
            };
            out.push_str(&serde_json::to_string(&line).expect("log line serialises"));
            out.push('\n');
        }
    }
    out
}

pub fn write_round_log(history: &[RoundRecord], path: &Path) -> Result<()> {
    write_atomic(path, round_log(history).as_bytes())
}
