use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::cost::mac_ratio;
use super::metrics::Metrics;
use super::model::{check_input, loss_and_grad, predict_early_exit, EarlyExitPolicy, ModelParams};
use super::optim::{adam_step, AdamState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Model-ready samples: channel-major inputs and 0/1 labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|i| self.inputs[*i].clone()).collect(),
            labels: idx.iter().map(|i| self.labels[*i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_aux: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda_aux: 0.3,
        }
    }
}

/// Mini-batch Adam over a shuffled shard. The optimizer state starts fresh.
/// Returns the updated parameters and the mean per-sample loss of each epoch.
pub fn train_local<R: Rng>(
    params: &ModelParams,
    shard: &LabeledSet,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<(ModelParams, Vec<f64>)> {
    if shard.is_empty() {
        return Err(Error::Dataset("cannot train on an empty shard".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::invariant("batch_size must be positive", "got 0"));
    }
    let mut p = params.clone();
    let mut state = AdamState::new(&p);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let xs: Vec<&Tensor> = chunk.iter().map(|i| &shard.inputs[*i]).collect();
            let ys: Vec<u8> = chunk.iter().map(|i| shard.labels[*i]).collect();
            let (l, g) = loss_and_grad(&p, &xs, &ys, opts.lambda_aux)?;
            adam_step(&mut p, &g, &mut state, opts.learning_rate);
            epoch_loss += l;
        }
        if !p.is_finite() {
            return Err(Error::Integrity(
                "training produced non-finite parameters".into(),
            ));
        }
        history.push(epoch_loss / shard.len() as f64);
    }
    Ok((p, history))
}

/// Per-sample `(probability, exited)`, in input order.
pub fn predict_all(
    p: &ModelParams,
    inputs: &[Tensor],
    policy: Option<EarlyExitPolicy>,
) -> Result<Vec<(f64, bool)>> {
    for x in inputs {
        check_input(&p.arch, x)?;
    }
    inputs
        .par_iter()
        .map(|x| predict_early_exit(p, x, policy))
        .collect()
}

/// Class decision at 0.5: eavesdropper iff `p > 0.5`.
pub fn decide(prob: f64) -> u8 {
    u8::from(prob > 0.5)
}

/// Confusion-matrix metrics; with a policy also exit rate and MAC ratio.
pub fn evaluate(
    p: &ModelParams,
    set: &LabeledSet,
    policy: Option<EarlyExitPolicy>,
) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty set".into()));
    }
    let out = predict_all(p, &set.inputs, policy)?;
    let predicted: Vec<u8> = out.iter().map(|(prob, _)| decide(*prob)).collect();
    let mut m = Metrics::from_predictions(&predicted, &set.labels);
    if policy.is_some() {
        let rate = out.iter().filter(|(_, e)| *e).count() as f64 / out.len() as f64;
        m.exit_rate = Some(rate);
        m.mac_ratio = Some(mac_ratio(&p.arch, rate));
    }
    Ok(m)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::model::Arch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Small inputs whose label is the sign of a constant plane (channel 3);
    /// the other planes carry label-independent noise.
    pub(crate) fn separable(n: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (9, 8, 10);
        let mut set = LabeledSet::default();
        for i in 0..n {
            let y = (i % 3 == 0) as u8;
            let mut data: Vec<f64> = (0..c * h * w)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect();
            let level = if y == 1 { 1.0 } else { -1.0 } + rng.random_range(-0.3..0.3);
            data[3 * h * w..4 * h * w].fill(level);
            set.inputs.push(Tensor::from_vec(&[c, h, w], data));
            set.labels.push(y);
        }
        set
    }

    fn start() -> ModelParams {
        ModelParams::init(
            Arch::with_input(8, 10, 9),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = start();
        let opts = TrainOptions {
            epochs: 0,
            ..TrainOptions::default()
        };
        let (q, hist) = train_local(
            &p,
            &separable(10, 1),
            &opts,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(p, q);
        assert!(hist.is_empty());
    }

    #[test]
    fn learns_a_separable_shard() {
        let set = separable(60, 3);
        let opts = TrainOptions {
            epochs: 20,
            batch_size: 8,
            ..TrainOptions::default()
        };
        let (q, _) = train_local(&start(), &set, &opts, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let m = evaluate(&q, &set, None).unwrap();
        assert!(m.accuracy >= 0.95, "train accuracy {}", m.accuracy);
    }

    #[test]
    fn training_is_deterministic() {
        let set = separable(20, 5);
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 6,
            ..TrainOptions::default()
        };
        let a = train_local(&start(), &set, &opts, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = train_local(&start(), &set, &opts, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_is_order_invariant_and_exit_monotone() {
        let set = separable(30, 6);
        let opts = TrainOptions {
            epochs: 3,
            batch_size: 8,
            ..TrainOptions::default()
        };
        let (q, _) = train_local(&start(), &set, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rev: Vec<usize> = (0..set.len()).collect();
        rev.reverse();
        assert_eq!(
            evaluate(&q, &set, None).unwrap(),
            evaluate(&q, &set.subset(&rev), None).unwrap()
        );
        let mut last = f64::INFINITY;
        for cl in [0.5, 0.55, 0.7, 0.9] {
            let m = evaluate(&q, &set, Some(EarlyExitPolicy::new(cl).unwrap())).unwrap();
            let rate = m.exit_rate.unwrap();
            assert!(rate <= last);
            if rate > 0.0 {
                assert!(m.mac_ratio.unwrap() < 1.0);
            }
            last = rate;
        }
    }
}
