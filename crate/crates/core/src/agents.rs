//! Communicating agents: one encoder, a noisy channel per decoder and four
//! question-answering decoders.
//!
//! Every decoder sees its own noisy copy of the latent vector. The noise
//! scales are trained to be as large as the answers allow, which pushes each
//! decoder to listen only to the latents it needs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{QASet, Scaler};
use crate::error::{Error, Result};
use crate::nn::{
    self, check_loss, shuffled_batches, softplus, standard_normal, Activation, Adam, AdamConfig,
    Checkpoint, Graph, Mlp, NodeId, ParamId, ParamStore, Tensor,
};
use crate::split_rng;

/// Number of questions, one decoder each.
pub const QUESTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub gamma: f64,
    /// Fraction of the epochs over which `gamma` ramps up linearly from zero.
    pub warmup_fraction: f64,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Starting value of every `logσ` entry.
    pub init_log_sigma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            warmup_fraction: 0.2,
            latent_dim: 5,
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32],
            init_log_sigma: -2.0,
            epochs: 60,
            lr: 1e-3,
            batch_size: nn::DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl AgentsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if self.latent_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "latent_dim and batch_size must be positive".into(),
            ));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.init_log_sigma.is_finite() {
            return Err(Error::Config(
                "lr must be positive and init_log_sigma finite".into(),
            ));
        }
        Ok(())
    }

    /// Penalty weight in effect during `epoch` (1-based).
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        let ramp = (self.warmup_fraction * self.epochs as f64).round();
        if ramp < 1.0 {
            self.gamma
        } else {
            self.gamma * (epoch as f64 / ramp).min(1.0)
        }
    }
}

/// `z̃ = z + exp(logσ) ⊙ ε` for each row, with `logσ` one channel column.
pub fn filter_transmit(z: &Tensor, log_sigma: &[f64], noise: &Tensor) -> Tensor {
    let mut out = z.clone();
    for r in 0..z.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v += log_sigma[c].exp() * noise.get(r, c);
        }
    }
    out
}

/// `Σ log(1 + exp(−2·logσ))` over all channels.
pub fn communication_cost(log_sigma: &Tensor) -> f64 {
    log_sigma.data().iter().map(|&s| softplus(-2.0 * s)).sum()
}

fn communication_cost_node(g: &mut Graph, log_sigma: NodeId) -> NodeId {
    let t = g.scale(log_sigma, -2.0);
    let sp = g.softplus(t);
    g.sum(sp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentsModel {
    pub config: AgentsConfig,
    pub input_dim: usize,
    pub encoder: Mlp,
    pub decoders: Vec<Mlp>,
    /// `m × k` noise scales, one column per decoder.
    pub log_sigma: ParamId,
    pub store: ParamStore,
    /// Standardisation of the answers fitted on the training split.
    pub answer_scaler: Scaler,
}

/// Nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub mse: [NodeId; QUESTIONS],
    pub comm: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub gamma: f64,
    pub loss: f64,
    pub mse: [f64; QUESTIONS],
    pub comm: f64,
    /// Noisy-channel MSE per answer on the validation split.
    pub val_mse: [f64; QUESTIONS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
}

impl AgentsModel {
    pub fn new(config: AgentsConfig, input_dim: usize, answer_scaler: Scaler) -> Result<Self> {
        config.validate()?;
        if answer_scaler.mean.len() != QUESTIONS {
            return Err(Error::shape(
                "answer scaler",
                &[QUESTIONS],
                &[answer_scaler.mean.len()],
            ));
        }
        let mut rng = split_rng(config.seed, 0);
        let mut store = ParamStore::new();
        let m = config.latent_dim;
        let mut enc = vec![input_dim];
        enc.extend(&config.encoder_hidden);
        enc.push(m);
        // Bounded latents keep the signal-to-noise ratio, not the raw scale, in charge.
        let encoder = Mlp::new(
            &mut store,
            "encoder",
            &enc,
            Activation::Tanh,
            Activation::Tanh,
            &mut rng,
        );
        let mut dec = vec![m];
        dec.extend(&config.decoder_hidden);
        dec.push(1);
        let decoders = (0..QUESTIONS)
            .map(|k| {
                Mlp::new(
                    &mut store,
                    &format!("decoder{k}"),
                    &dec,
                    Activation::Tanh,
                    Activation::Identity,
                    &mut rng,
                )
            })
            .collect();
        let log_sigma = store.add(
            "log_sigma",
            Tensor::filled(m, QUESTIONS, config.init_log_sigma),
        );
        Ok(Self {
            config,
            input_dim,
            encoder,
            decoders,
            log_sigma,
            store,
            answer_scaler,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Noise scale column of decoder `k`.
    pub fn log_sigma_column(&self, k: usize) -> Vec<f64> {
        self.store.get(self.log_sigma).column(k)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(
                "agents window",
                &[self.input_dim],
                &[x.cols()],
            ));
        }
        Ok(())
    }

    /// Encoder outputs `z`, one row per window.
    pub fn latent_responses(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder.eval(&self.store, x)
    }

    /// Standardised answers from the noisy channels; `noise[k]` is `n × m`.
    pub fn answer_standardized(&self, x: &Tensor, noise: Option<&[Tensor]>) -> Result<Tensor> {
        let z = self.latent_responses(x)?;
        let mut out = Tensor::zeros(x.rows(), QUESTIONS);
        for (k, d) in self.decoders.iter().enumerate() {
            let zk = match noise {
                Some(n) => filter_transmit(&z, &self.log_sigma_column(k), &n[k]),
                None => z.clone(),
            };
            let a = d.eval(&self.store, &zk)?;
            for r in 0..x.rows() {
                out.set(r, k, a.get(r, 0));
            }
        }
        Ok(out)
    }

    /// Answers in original units through noise-free channels.
    pub fn answer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self
            .answer_scaler
            .inverse(&self.answer_standardized(x, None)?))
    }

    pub fn draw_noise<R: rand::Rng>(&self, rows: usize, rng: &mut R) -> Vec<Tensor> {
        (0..QUESTIONS)
            .map(|_| standard_normal(rows, self.latent_dim(), rng))
            .collect()
    }

    /// `Σ_k MSE(D_k(z̃_k), a_k) + γ·C` for standardised answers `a`.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: &Tensor,
        answers: &Tensor,
        noise: &[Tensor],
        gamma: f64,
    ) -> Result<LossNodes> {
        self.check_input(x)?;
        if answers.shape() != [x.rows(), QUESTIONS] {
            return Err(Error::shape(
                "agents answers",
                &[x.rows(), QUESTIONS],
                &answers.shape(),
            ));
        }
        let xn = g.constant(x.clone());
        let z = self.encoder.forward(g, store, xn)?;
        let ls = g.param(store, self.log_sigma);
        let mut mse = [z; QUESTIONS];
        let mut total: Option<NodeId> = None;
        for (k, d) in self.decoders.iter().enumerate() {
            let col = g.slice_cols(ls, k, k + 1);
            let row = g.transpose(col);
            let sigma = g.exp(row);
            let eps = g.constant(noise[k].clone());
            let scaled = g.mul_row(eps, sigma);
            let zk = g.add(z, scaled);
            let pred = d.forward(g, store, zk)?;
            let target = g.constant(Tensor::new(x.rows(), 1, answers.column(k))?);
            mse[k] = nn::mse(g, pred, target);
            total = Some(match total {
                None => mse[k],
                Some(t) => g.add(t, mse[k]),
            });
        }
        let comm = communication_cost_node(g, ls);
        let weighted = g.scale(comm, gamma);
        let total = g.add(total.expect("four decoders"), weighted);
        Ok(LossNodes { total, mse, comm })
    }

    /// Per-answer MSE with noisy channels, on standardised answers.
    pub fn noisy_mse(
        &self,
        x: &Tensor,
        answers: &Tensor,
        noise: &[Tensor],
    ) -> Result<[f64; QUESTIONS]> {
        let pred = self.answer_standardized(x, Some(noise))?;
        let mut out = [0.0; QUESTIONS];
        let n = x.rows().max(1) as f64;
        for (k, v) in out.iter_mut().enumerate() {
            *v = (0..x.rows())
                .map(|r| (pred.get(r, k) - answers.get(r, k)).powi(2))
                .sum::<f64>()
                / n;
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            &self.store,
            serde_json::json!({
                "model": "agents",
                "input_dim": self.input_dim,
                "config": self.config,
                "answer_scaler": self.answer_scaler,
            }),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: AgentsConfig = serde_json::from_value(ckpt.manifest["config"].clone())?;
        let scaler: Scaler = serde_json::from_value(ckpt.manifest["answer_scaler"].clone())?;
        let input_dim = ckpt.manifest["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint lacks input_dim".into()))?
            as usize;
        let mut model = Self::new(config, input_dim, scaler)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub fn train(data: &QASet, config: &AgentsConfig) -> Result<(AgentsModel, TrainReport)> {
    let base = &data.base;
    let train_x = base.standardized_matrix(&base.split.train);
    let val_x = base.standardized_matrix(&base.split.val);
    let train_a = data.answer_matrix(&base.split.train);
    let val_a = data.answer_matrix(&base.split.val);
    train_on(&train_x, &train_a, &val_x, &val_a, config)
}

/// Trains on raw answers; they are standardised with training-split statistics.
pub fn train_on(
    train_x: &Tensor,
    train_a: &Tensor,
    val_x: &Tensor,
    val_a: &Tensor,
    config: &AgentsConfig,
) -> Result<(AgentsModel, TrainReport)> {
    let scaler = Scaler::fit([train_a]);
    let (ta, va) = (scaler.transform(train_a), scaler.transform(val_a));
    let mut model = AgentsModel::new(config.clone(), train_x.cols(), scaler)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.store,
    );
    let mut rng = split_rng(config.seed, 1);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let gamma = config.gamma_at(epoch);
        let (mut sum, mut mse, mut comm) = (0.0, [0.0; QUESTIONS], 0.0);
        for batch in shuffled_batches(train_x.rows(), config.batch_size, &mut rng) {
            let x = train_x.select_rows(&batch);
            let a = ta.select_rows(&batch);
            let noise = model.draw_noise(batch.len(), &mut rng);
            let mut g = Graph::new();
            let nodes = model.loss_graph(&mut g, &model.store, &x, &a, &noise, gamma)?;
            let loss = g.scalar(nodes.total);
            check_loss(epoch, loss)?;
            let w = batch.len() as f64;
            sum += loss * w;
            for (acc, id) in mse.iter_mut().zip(nodes.mse) {
                *acc += g.scalar(id) * w;
            }
            comm += g.scalar(nodes.comm) * w;
            let grads = g.backward(nodes.total)?;
            adam.step(&mut model.store, grads.params())?;
        }
        let n = train_x.rows().max(1) as f64;
        let val_mse = if val_x.rows() > 0 {
            let noise = model.draw_noise(val_x.rows(), &mut split_rng(config.seed, 2));
            model.noisy_mse(val_x, &va, &noise)?
        } else {
            [f64::NAN; QUESTIONS]
        };
        history.push(EpochStats {
            epoch,
            gamma,
            loss: sum / n,
            mse: mse.map(|v| v / n),
            comm: comm / n,
            val_mse,
        });
    }
    Ok((model, TrainReport { history }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::Rng;

    fn small() -> AgentsConfig {
        AgentsConfig {
            latent_dim: 3,
            encoder_hidden: vec![4],
            decoder_hidden: vec![3],
            init_log_sigma: -0.5,
            epochs: 2,
            batch_size: 8,
            seed: 4,
            ..Default::default()
        }
    }

    fn toy(rows: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = split_rng(seed, 0);
        let x: Vec<f64> = (0..rows * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(rows, 6, x).unwrap();
        let mut a = Tensor::zeros(rows, QUESTIONS);
        for r in 0..rows {
            let v = x.row(r).to_vec();
            a.row_mut(r)
                .copy_from_slice(&[v[0], v[1] * 2.0, v[2] - v[3], v[4] * v[5]]);
        }
        (x, a)
    }

    #[test]
    fn filter_cases() {
        let z = Tensor::from_rows(&[[1.0, -2.0], [0.5, 0.0]]).unwrap();
        assert_eq!(filter_transmit(&z, &[0.3, -1.0], &Tensor::zeros(2, 2)), z);
        let near = filter_transmit(&z, &[-60.0, -60.0], &Tensor::ones(2, 2));
        for (a, b) in near.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-25);
        }
    }

    #[test]
    fn filter_noise_spread() {
        let n = 100_000;
        let z = Tensor::zeros(n, 1);
        let ls = 0.4f64;
        let out = filter_transmit(&z, &[ls], &standard_normal(n, 1, &mut split_rng(1, 0)));
        let mean = out.sum() / n as f64;
        let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / ls.exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn communication_cost_cases() {
        assert!((communication_cost(&Tensor::zeros(5, 4)) - 20.0 * 2f64.ln()).abs() < 1e-12);
        assert!(communication_cost(&Tensor::filled(1, 1, 40.0)) < 1e-30);
        let sweep: Vec<f64> = (-40..=40)
            .map(|i| communication_cost(&Tensor::scalar(i as f64 * 0.25)))
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]));
        assert!(sweep.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn gamma_warmup_is_linear() {
        let c = AgentsConfig {
            epochs: 50,
            gamma: 0.1,
            ..Default::default()
        };
        assert!((c.gamma_at(5) - 0.05).abs() < 1e-15);
        assert_eq!(c.gamma_at(10), 0.1);
        assert_eq!(c.gamma_at(40), 0.1);
        let none = AgentsConfig {
            warmup_fraction: 0.0,
            ..c
        };
        assert_eq!(none.gamma_at(1), 0.1);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (x, a) = toy(6, 2);
        let model = AgentsModel::new(small(), 6, Scaler::identity(QUESTIONS)).unwrap();
        let noise = model.draw_noise(6, &mut split_rng(3, 0));
        let report = gradcheck::check_params(&model.store, gradcheck::DEFAULT_STEP, |g, s| {
            model.loss_graph(g, s, &x, &a, &noise, 0.3).unwrap().total
        });
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn zero_gamma_is_plain_regression() {
        let (x, a) = toy(5, 1);
        let model = AgentsModel::new(small(), 6, Scaler::identity(QUESTIONS)).unwrap();
        let noise = model.draw_noise(5, &mut split_rng(0, 0));
        let mut g = Graph::new();
        let nodes = model
            .loss_graph(&mut g, &model.store, &x, &a, &noise, 0.0)
            .unwrap();
        let direct = model.noisy_mse(&x, &a, &noise).unwrap();
        assert!((g.scalar(nodes.total) - direct.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn perfect_decoders_with_infinite_noise_cost_nothing() {
        // Constant decoders that ignore the channel answer a constant target exactly.
        let mut model = AgentsModel::new(small(), 6, Scaler::identity(QUESTIONS)).unwrap();
        for d in &model.decoders {
            let last = d.layers.last().unwrap();
            *model.store.get_mut(last.w) = Tensor::zeros(1, last.in_dim);
            *model.store.get_mut(last.b) = Tensor::scalar(0.7);
        }
        *model.store.get_mut(model.log_sigma) = Tensor::filled(3, QUESTIONS, 400.0);
        let (x, _) = toy(4, 0);
        let a = Tensor::filled(4, QUESTIONS, 0.7);
        let noise = vec![Tensor::zeros(4, 3); QUESTIONS];
        let mut g = Graph::new();
        let nodes = model
            .loss_graph(&mut g, &model.store, &x, &a, &noise, 1.0)
            .unwrap();
        assert_eq!(g.scalar(nodes.total), 0.0);
    }

    #[test]
    fn training_determinism_and_zero_epochs() {
        let (x, a) = toy(32, 5);
        let cfg = AgentsConfig {
            epochs: 0,
            ..small()
        };
        let (m0, r0) = train_on(&x, &a, &x, &a, &cfg).unwrap();
        assert!(r0.history.is_empty());
        assert_eq!(m0, AgentsModel::new(cfg, 6, Scaler::fit([&a])).unwrap());
        let (m1, _) = train_on(&x, &a, &x, &a, &small()).unwrap();
        let (m2, _) = train_on(&x, &a, &x, &a, &small()).unwrap();
        assert_eq!(m1.store, m2.store);
    }

    #[test]
    fn latent_responses_row_wise_and_checkpoint() {
        let (x, a) = toy(16, 8);
        let (model, _) = train_on(&x, &a, &x, &a, &small()).unwrap();
        let dup = Tensor::from_rows(&[x.row(3), x.row(3)]).unwrap();
        let z = model.latent_responses(&dup).unwrap();
        assert_eq!(z.rows(), 2);
        assert_eq!(z.row(0), z.row(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agents.json");
        model.save(&path).unwrap();
        assert_eq!(AgentsModel::load(&path).unwrap(), model);
    }
}
