//! β-weighted variational autoencoder over flattened, standardised windows.
//!
//! The encoder maps a window to the mean and log-variance of a diagonal
//! Gaussian posterior; the decoder maps a latent sample back to the window
//! mean under a unit-variance Gaussian likelihood.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ConceptLabeledSet;
use crate::error::{Error, Result};
use crate::nn::{
    self, check_loss, shuffled_batches, standard_normal, Activation, Adam, AdamConfig, Checkpoint,
    Graph, Mlp, NodeId, ParamStore, Tensor,
};
use crate::split_rng;

/// Per-dimension KL below which a latent counts as inactive.
pub const INACTIVE_KL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvaeConfig {
    pub beta: f64,
    pub latent_dim: usize,
    /// Encoder hidden sizes; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BvaeConfig {
    fn default() -> Self {
        Self {
            beta: 4.0,
            latent_dim: 5,
            hidden: vec![64, 32],
            epochs: 40,
            lr: 1e-3,
            batch_size: nn::DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl BvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.latent_dim == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "latent_dim, batch_size and hidden sizes must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvaeModel {
    pub config: BvaeConfig,
    pub input_dim: usize,
    /// Outputs `[μ | logσ²]`.
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub store: ParamStore,
}

/// `z = μ + exp(logvar / 2) ⊙ ε`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Tensor {
    let std = logvar.map(|v| (0.5 * v).exp());
    let mut z = std.zip_map(noise, |s, e| s * e);
    z.add_assign(mu);
    z
}

fn reparameterize_node(g: &mut Graph, mu: NodeId, logvar: NodeId, noise: NodeId) -> NodeId {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let spread = g.mul(std, noise);
    g.add(mu, spread)
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, I))` per row.
pub fn kl_rows(mu: &Tensor, logvar: &Tensor) -> Vec<f64> {
    (0..mu.rows())
        .map(|r| {
            mu.row(r)
                .iter()
                .zip(logvar.row(r))
                .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
                .sum()
        })
        .collect()
}

/// Mean KL of each latent dimension over the rows.
pub fn kl_per_dim(mu: &Tensor, logvar: &Tensor) -> Vec<f64> {
    let n = mu.rows().max(1) as f64;
    (0..mu.cols())
        .map(|j| {
            (0..mu.rows())
                .map(|r| {
                    let (m, lv) = (mu.get(r, j), logvar.get(r, j));
                    0.5 * (lv.exp() + m * m - 1.0 - lv)
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Loss value with its two parts, batch-averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    /// `½‖x − x̂‖²`, i.e. the entry MSE times `s·n / 2`.
    pub recon: f64,
    pub kl: f64,
}

/// Negative ELBO up to constants: `½‖x − x̂‖² + β·KL`, averaged over rows.
pub fn elbo_loss(
    window: &Tensor,
    recon: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    beta: f64,
) -> ElboTerms {
    let n = window.rows().max(1) as f64;
    let rec = 0.5 * window.zip_map(recon, |a, b| (a - b) * (a - b)).sum() / n;
    let kl = kl_rows(mu, logvar).iter().sum::<f64>() / n;
    ElboTerms {
        total: rec + beta * kl,
        recon: rec,
        kl,
    }
}

/// Graph version of [`elbo_loss`]; returns `(total, recon, kl)` nodes.
pub fn elbo_node(
    g: &mut Graph,
    x: NodeId,
    recon: NodeId,
    mu: NodeId,
    logvar: NodeId,
    beta: f64,
) -> (NodeId, NodeId, NodeId) {
    let n = g.shape(x)[0] as f64;
    let se = nn::mean_row_sq_error(g, recon, x);
    let rec = g.scale(se, 0.5);
    let e = g.exp(logvar);
    let m2 = g.square(mu);
    let t = g.add(e, m2);
    let t = g.sub(t, logvar);
    let t = g.add_scalar(t, -1.0);
    let s = g.sum(t);
    let kl = g.scale(s, 0.5 / n);
    let weighted = g.scale(kl, beta);
    let total = g.add(rec, weighted);
    (total, rec, kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    /// Noise-free loss on the validation split.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Noise-free training loss before the first update.
    pub initial_loss: f64,
    /// Noise-free training loss after the last update.
    pub final_loss: f64,
    pub history: Vec<EpochStats>,
}

impl BvaeModel {
    pub fn new(config: BvaeConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = split_rng(config.seed, 0);
        let mut store = ParamStore::new();
        let m = config.latent_dim;
        let mut enc_sizes = vec![input_dim];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(2 * m);
        let mut dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
        dec_sizes[0] = m;
        let encoder = Mlp::new(
            &mut store,
            "encoder",
            &enc_sizes,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let decoder = Mlp::new(
            &mut store,
            "decoder",
            &dec_sizes,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        Ok(Self {
            config,
            input_dim,
            encoder,
            decoder,
            store,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape("bvae window", &[self.input_dim], &[x.cols()]));
        }
        Ok(())
    }

    /// Posterior parameters `(μ, logσ²)` for each row of `x`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let out = self.encoder.eval(&self.store, x)?;
        let m = self.latent_dim();
        let mut mu = Tensor::zeros(x.rows(), m);
        let mut lv = Tensor::zeros(x.rows(), m);
        for r in 0..x.rows() {
            mu.row_mut(r).copy_from_slice(&out.row(r)[..m]);
            lv.row_mut(r).copy_from_slice(&out.row(r)[m..]);
        }
        Ok((mu, lv))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.eval(&self.store, z)
    }

    /// Posterior means, one row per window.
    pub fn encode_means(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x)?.0)
    }

    /// Loss with `ε = 0`, i.e. decoding the posterior means.
    pub fn mean_loss(&self, x: &Tensor) -> Result<ElboTerms> {
        let (mu, lv) = self.encode(x)?;
        let recon = self.decode(&mu)?;
        Ok(elbo_loss(x, &recon, &mu, &lv, self.config.beta))
    }

    /// Records the stochastic loss for a batch; returns `(total, recon, kl)`.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: &Tensor,
        noise: &Tensor,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        self.check_input(x)?;
        let m = self.latent_dim();
        let xn = g.constant(x.clone());
        let out = self.encoder.forward(g, store, xn)?;
        let mu = g.slice_cols(out, 0, m);
        let lv = g.slice_cols(out, m, 2 * m);
        let eps = g.constant(noise.clone());
        let z = reparameterize_node(g, mu, lv, eps);
        let recon = self.decoder.forward(g, store, z)?;
        Ok(elbo_node(g, xn, recon, mu, lv, self.config.beta))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            &self.store,
            serde_json::json!({
                "model": "bvae",
                "input_dim": self.input_dim,
                "config": self.config,
            }),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: BvaeConfig = serde_json::from_value(ckpt.manifest["config"].clone())?;
        let input_dim = ckpt.manifest["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint lacks input_dim".into()))?
            as usize;
        let mut model = Self::new(config, input_dim)?;
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

/// Trains on the training split of `data`; the validation split is only scored.
pub fn train(data: &ConceptLabeledSet, config: &BvaeConfig) -> Result<(BvaeModel, TrainReport)> {
    let train_x = data.standardized_matrix(&data.split.train);
    let val_x = data.standardized_matrix(&data.split.val);
    train_on(&train_x, &val_x, config)
}

pub fn train_on(
    train_x: &Tensor,
    val_x: &Tensor,
    config: &BvaeConfig,
) -> Result<(BvaeModel, TrainReport)> {
    let mut model = BvaeModel::new(config.clone(), train_x.cols())?;
    let initial_loss = model.mean_loss(train_x)?.total;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.store,
    );
    let mut rng = split_rng(config.seed, 1);
    let mut history = Vec::with_capacity(config.epochs);
    let m = config.latent_dim;
    for epoch in 1..=config.epochs {
        let (mut sum, mut rec, mut kl) = (0.0, 0.0, 0.0);
        for batch in shuffled_batches(train_x.rows(), config.batch_size, &mut rng) {
            let x = train_x.select_rows(&batch);
            let noise = standard_normal(batch.len(), m, &mut rng);
            let mut g = Graph::new();
            let (total, r, k) = model.loss_graph(&mut g, &model.store, &x, &noise)?;
            let w = batch.len() as f64;
            sum += g.scalar(total) * w;
            rec += g.scalar(r) * w;
            kl += g.scalar(k) * w;
            check_loss(epoch, g.scalar(total))?;
            let grads = g.backward(total)?;
            adam.step(&mut model.store, grads.params())?;
        }
        let n = train_x.rows().max(1) as f64;
        let val_loss = if val_x.rows() > 0 {
            model.mean_loss(val_x)?.total
        } else {
            f64::NAN
        };
        check_loss(epoch, sum / n)?;
        history.push(EpochStats {
            epoch,
            loss: sum / n,
            recon: rec / n,
            kl: kl / n,
            val_loss,
        });
    }
    let final_loss = model.mean_loss(train_x)?.total;
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            history,
        },
    ))
}

/// Indices of latents whose mean KL falls below [`INACTIVE_KL`].
pub fn inactive_dims(kl: &[f64]) -> Vec<usize> {
    kl.iter()
        .enumerate()
        .filter(|(_, &v)| v < INACTIVE_KL)
        .map(|(j, _)| j)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::Rng;

    fn small_config() -> BvaeConfig {
        BvaeConfig {
            latent_dim: 2,
            hidden: vec![4],
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..Default::default()
        }
    }

    fn toy_data(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = split_rng(seed, 0);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn reparameterize_cases() {
        let mu = Tensor::row_vector(&[0.5, -1.0, 2.0, 0.0, 3.0]);
        assert_eq!(
            reparameterize(&mu, &Tensor::zeros(1, 5), &Tensor::zeros(1, 5)),
            mu
        );
        let z = reparameterize(&mu, &Tensor::zeros(1, 5), &Tensor::ones(1, 5));
        assert_eq!(z.data(), &[1.5, 0.0, 3.0, 1.0, 4.0]);
    }

    #[test]
    fn reparameterized_sample_mean() {
        let n = 100_000;
        let mut rng = split_rng(5, 0);
        let mu = Tensor::filled(n, 1, 0.7);
        let lv = Tensor::filled(n, 1, (1.5f64).ln() * 2.0);
        let z = reparameterize(&mu, &lv, &standard_normal(n, 1, &mut rng));
        let mean = z.sum() / n as f64;
        assert!((mean - 0.7).abs() < 3.0 * 1.5 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(
            kl_rows(&Tensor::zeros(1, 5), &Tensor::zeros(1, 5)),
            vec![0.0]
        );
        assert_eq!(
            kl_rows(&Tensor::ones(1, 5), &Tensor::zeros(1, 5)),
            vec![2.5]
        );
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q(z) − log p(z)] estimated from samples of q.
        let mu = [0.8, -0.3, 1.2];
        let lv: [f64; 3] = [-0.5, 0.4, 0.0];
        let n = 200_000;
        let mut rng = split_rng(9, 0);
        let mut acc = 0.0;
        for _ in 0..n {
            for j in 0..3 {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                let s = (0.5 * lv[j]).exp();
                let z = mu[j] + s * e;
                let log_q = -0.5 * e * e - s.ln();
                let log_p = -0.5 * z * z;
                acc += log_q - log_p;
            }
        }
        let mc = acc / n as f64;
        let exact = kl_rows(&Tensor::row_vector(&mu), &Tensor::row_vector(&lv))[0];
        assert!((mc - exact).abs() < 0.01 * exact, "{mc} vs {exact}");
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let x = toy_data(5, 6, 1);
        let noise = standard_normal(5, 2, &mut split_rng(2, 0));
        let model = BvaeModel::new(small_config(), 6).unwrap();
        let report = gradcheck::check_params(&model.store, gradcheck::DEFAULT_STEP, |g, s| {
            model.loss_graph(g, s, &x, &noise).unwrap().0
        });
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn graph_loss_matches_tensor_loss() {
        let x = toy_data(7, 6, 4);
        let model = BvaeModel::new(small_config(), 6).unwrap();
        let mut g = Graph::new();
        let (total, rec, kl) = model
            .loss_graph(&mut g, &model.store, &x, &Tensor::zeros(7, 2))
            .unwrap();
        let direct = model.mean_loss(&x).unwrap();
        assert!((g.scalar(total) - direct.total).abs() < 1e-12);
        assert!((g.scalar(rec) - direct.recon).abs() < 1e-12);
        assert!((g.scalar(kl) - direct.kl).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_keep_initial_parameters() {
        let x = toy_data(16, 6, 0);
        let cfg = BvaeConfig {
            epochs: 0,
            ..small_config()
        };
        let (model, report) = train_on(&x, &x, &cfg).unwrap();
        assert_eq!(model, BvaeModel::new(cfg, 6).unwrap());
        assert!(report.history.is_empty());
        assert_eq!(report.initial_loss, report.final_loss);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let x = toy_data(64, 6, 7);
        let cfg = BvaeConfig {
            epochs: 30,
            ..small_config()
        };
        let (a, ra) = train_on(&x, &x, &cfg).unwrap();
        let (b, _) = train_on(&x, &x, &cfg).unwrap();
        assert_eq!(a.store, b.store);
        assert!(ra.final_loss < ra.initial_loss);
    }

    #[test]
    fn encode_means_are_row_wise() {
        let model = BvaeModel::new(small_config(), 6).unwrap();
        let x = toy_data(1, 6, 2);
        let dup = Tensor::from_rows(&[x.row(0), x.row(0), x.row(0)]).unwrap();
        let mu = model.encode_means(&dup).unwrap();
        assert_eq!(mu.rows(), 3);
        assert_eq!(mu.row(0), mu.row(2));
        assert!(model.encode_means(&Tensor::zeros(2, 5)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bvae.json");
        let (model, _) =
            train_on(&toy_data(16, 6, 1), &Tensor::zeros(0, 6), &small_config()).unwrap();
        model.save(&path).unwrap();
        assert_eq!(BvaeModel::load(&path).unwrap(), model);
    }

    #[test]
    fn inactive_threshold() {
        assert_eq!(inactive_dims(&[0.3, 0.01, 2.0, 0.049, 0.05]), vec![1, 3]);
    }
}
