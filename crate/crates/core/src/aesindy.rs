//! Autoencoder with sparse latent dynamics.
//!
//! An encoder `φ` maps lifted observations to a 3-dimensional latent state,
//! a decoder `ψ` maps back, and `ż = Θ(z)·Ξ` is identified jointly. The loss
//! has four terms:
//!
//! ```text
//! ‖x − ψ(z)‖² + λ1‖ẋ − J_ψ(z)·Θ(z)Ξ‖² + λ2‖J_φ(x)·ẋ − Θ(z)Ξ‖² + λ3‖Ξ‖₁
//! ```
//!
//! Both Jacobian products are recorded as forward-mode tangents inside the
//! graph, so every term is differentiable with respect to all parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{lift_state, sample_initial_state, Interval, LiftedSet};
use crate::error::{Error, Result};
use crate::nn::{
    self, check_loss, shuffled_batches, Activation, Adam, AdamConfig, Checkpoint, Graph, Mlp,
    NodeId, ParamId, ParamStore, Tensor,
};
use crate::sim::{self, SystemState, TankParams};
use crate::sindy::{self, CandidateLibrary, LibraryConfig, SindyModel, Xi};
use crate::split_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AesindyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub latent_dim: usize,
    /// Encoder hidden sizes; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub library: LibraryConfig,
    /// Coefficients below this magnitude are masked at each thresholding step.
    pub threshold: f64,
    /// Epochs between thresholding steps.
    pub threshold_every: usize,
    /// First epoch after which thresholding may happen.
    pub threshold_warmup: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AesindyConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.2,
            lambda3: 1e-5,
            latent_dim: 3,
            hidden: vec![32, 16],
            library: LibraryConfig {
                poly_degree: 3,
                trig: false,
                pair_sqrt: true,
                unary_sqrt: true,
            },
            threshold: 0.01,
            threshold_every: 10,
            threshold_warmup: 50,
            epochs: 100,
            lr: 1e-3,
            batch_size: nn::DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl AesindyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("threshold", self.threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.latent_dim == 0
            || self.batch_size == 0
            || self.threshold_every == 0
            || self.hidden.contains(&0)
        {
            return Err(Error::Config(
                "latent_dim, batch_size, threshold_every and hidden sizes must be positive".into(),
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

    fn latent_library(&self) -> CandidateLibrary {
        let names: Vec<String> = (1..=self.latent_dim).map(|i| format!("z{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        CandidateLibrary::build(&refs, self.library)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AesindyModel {
    pub config: AesindyConfig,
    pub input_dim: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub library: CandidateLibrary,
    /// `p × m` coefficients.
    pub xi: ParamId,
    /// Row-major `p × m`; `false` entries are held at exactly zero.
    pub mask: Vec<bool>,
    pub store: ParamStore,
}

/// The four loss terms, batch-averaged, and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub sindy_x: f64,
    pub sindy_z: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub recon: NodeId,
    pub sindy_x: NodeId,
    pub sindy_z: NodeId,
    pub l1: NodeId,
}

impl LossNodes {
    fn read(&self, g: &Graph) -> LossTerms {
        LossTerms {
            total: g.scalar(self.total),
            recon: g.scalar(self.recon),
            sindy_x: g.scalar(self.sindy_x),
            sindy_z: g.scalar(self.sindy_z),
            l1: g.scalar(self.l1),
        }
    }
}

impl AesindyModel {
    pub fn new(config: AesindyConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = split_rng(config.seed, 0);
        let mut store = ParamStore::new();
        let m = config.latent_dim;
        let mut enc = vec![input_dim];
        enc.extend(&config.hidden);
        enc.push(m);
        let mut dec: Vec<usize> = enc.iter().rev().copied().collect();
        dec[0] = m;
        let encoder = Mlp::new(
            &mut store,
            "encoder",
            &enc,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let decoder = Mlp::new(
            &mut store,
            "decoder",
            &dec,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let library = config.latent_library();
        let p = library.len();
        let xi = store.add("xi", Tensor::zeros(p, m));
        Ok(Self {
            config,
            input_dim,
            encoder,
            decoder,
            library,
            xi,
            mask: vec![true; p * m],
            store,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn mask_tensor(&self) -> Tensor {
        let (p, m) = (self.library.len(), self.latent_dim());
        Tensor::new(
            p,
            m,
            self.mask
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("mask shape")
    }

    /// Coefficients with the mask applied.
    pub fn coefficients(&self) -> Tensor {
        self.store
            .get(self.xi)
            .zip_map(&self.mask_tensor(), |v, k| v * k)
    }

    fn check(&self, x: &Tensor, xdot: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim || xdot.shape() != x.shape() {
            return Err(Error::shape(
                "aesindy batch",
                &[x.rows(), self.input_dim],
                &xdot.shape(),
            ));
        }
        if !x.all_finite() || !xdot.all_finite() {
            return Err(Error::Domain(
                "aesindy batch contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// `z = φ(x)` and `ż = J_φ(x)·ẋ`.
    pub fn latent_state_and_derivative(
        &self,
        x: &Tensor,
        xdot: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        self.check(x, xdot)?;
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let vn = g.constant(xdot.clone());
        let (z, zd) = self.encoder.jvp(&mut g, &self.store, xn, vn)?;
        Ok((g.value(z).clone(), g.value(zd).clone()))
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.eval(&self.store, x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.eval(&self.store, z)
    }

    pub fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: &Tensor,
        xdot: &Tensor,
    ) -> Result<LossNodes> {
        self.check(x, xdot)?;
        let c = &self.config;
        let xn = g.constant(x.clone());
        let vn = g.constant(xdot.clone());
        let (z, zdot) = self.encoder.jvp(g, store, xn, vn)?;
        let theta = self.library.theta_node(g, z);
        let xi_raw = g.param(store, self.xi);
        let mask = g.constant(self.mask_tensor());
        let xi = g.mul(xi_raw, mask);
        let f = g.matmul(theta, xi);
        let (xhat, xdot_hat) = self.decoder.jvp(g, store, z, f)?;
        let recon = nn::mean_row_sq_error(g, xn, xhat);
        let sindy_x = nn::mean_row_sq_error(g, vn, xdot_hat);
        let sindy_z = nn::mean_row_sq_error(g, zdot, f);
        let a = g.abs(xi);
        let l1 = g.sum(a);
        let t1 = g.scale(sindy_x, c.lambda1);
        let t2 = g.scale(sindy_z, c.lambda2);
        let t3 = g.scale(l1, c.lambda3);
        let s = g.add(recon, t1);
        let s = g.add(s, t2);
        let total = g.add(s, t3);
        Ok(LossNodes {
            total,
            recon,
            sindy_x,
            sindy_z,
            l1,
        })
    }

    pub fn loss(&self, x: &Tensor, xdot: &Tensor) -> Result<LossTerms> {
        let mut g = Graph::new();
        let nodes = self.loss_graph(&mut g, &self.store, x, xdot)?;
        Ok(nodes.read(&g))
    }

    /// Masks every active coefficient below `threshold` and zeroes it.
    /// Returns the number of newly masked entries.
    pub fn apply_threshold(&mut self, threshold: f64) -> usize {
        let xi = self.store.get_mut(self.xi);
        let mut newly = 0;
        for (v, keep) in xi.data_mut().iter_mut().zip(self.mask.iter_mut()) {
            if *keep && v.abs() < threshold {
                *keep = false;
                newly += 1;
            }
            if !*keep {
                *v = 0.0;
            }
        }
        newly
    }

    fn enforce_mask(&mut self) {
        let xi = self.store.get_mut(self.xi);
        for (v, keep) in xi.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *v = 0.0;
            }
        }
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Latent dimensions whose derivative has at least one active term.
    pub fn dynamic_latents(&self) -> usize {
        let m = self.latent_dim();
        let coef = self.coefficients();
        (0..m)
            .filter(|&k| (0..self.library.len()).any(|j| coef.get(j, k) != 0.0))
            .count()
    }

    /// The latent dynamics as a plain sparse model.
    pub fn latent_model(&self) -> SindyModel {
        let values = self.coefficients();
        let mask = values
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(v, &k)| k && *v != 0.0)
            .collect();
        SindyModel {
            library: self.library.clone(),
            xi: Xi { values, mask },
            fits: Vec::new(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            &self.store,
            serde_json::json!({
                "model": "aesindy",
                "input_dim": self.input_dim,
                "config": self.config,
                "mask": self.mask,
                "library": self.library.names(),
            }),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: AesindyConfig = serde_json::from_value(ckpt.manifest["config"].clone())?;
        let mask: Vec<bool> = serde_json::from_value(ckpt.manifest["mask"].clone())?;
        let input_dim = ckpt.manifest["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint lacks input_dim".into()))?
            as usize;
        let mut model = Self::new(config, input_dim)?;
        if mask.len() != model.mask.len() {
            return Err(Error::shape(
                "coefficient mask",
                &[model.mask.len()],
                &[mask.len()],
            ));
        }
        model.mask = mask;
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

/// Result of integrating the latent dynamics and decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Roundtrip {
    /// Decoded trajectory, `(steps + 1) × input_dim`.
    pub predicted: Tensor,
    pub latent: Tensor,
    pub relative_mse: f64,
}

/// Encodes `truth`'s first row, integrates `ż = Θ(z)Ξ` for `truth.rows() − 1`
/// RK4 steps, decodes every state and scores against `truth`.
pub fn roundtrip_eval(model: &AesindyModel, truth: &Tensor, dt: f64) -> Result<Roundtrip> {
    if truth.rows() == 0 {
        return Err(Error::Domain("roundtrip needs an initial state".into()));
    }
    let x0 = truth.select_rows(&[0]);
    let z0 = model.encode(&x0)?;
    let latent_model = model.latent_model();
    let steps = truth.rows() - 1;
    let latent = sindy::integrate(z0.row(0), dt, steps, sindy::DEFAULT_ESCAPE_BOUND, |z| {
        latent_model.rhs(z)
    })?;
    let predicted = model.decode(&latent)?;
    let relative_mse = sindy::relative_trajectory_mse(&predicted, &truth)?;
    Ok(Roundtrip {
        predicted,
        latent,
        relative_mse,
    })
}

/// Lifted ground-truth trajectory of `steps` steps from `x0`.
pub fn lifted_trajectory(
    x0: SystemState,
    params: &TankParams,
    dt: f64,
    steps: usize,
    scale: f64,
) -> Result<Tensor> {
    let traj = sim::simulate(x0, params, dt, steps)?;
    let rows: Vec<Vec<f64>> = traj
        .to_rows()
        .iter()
        .map(|h| lift_state(h, scale))
        .collect();
    Tensor::from_rows(&rows)
}

/// Held-out initial states drawn from a stream disjoint from data generation.
pub fn held_out_states(ic_box: &Interval, count: usize, seed: u64) -> Vec<SystemState> {
    (0..count)
        .map(|i| sample_initial_state(ic_box, &mut split_rng(seed ^ 0x5EED_0F_4E1D, i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub terms: LossTerms,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
}

pub fn train(data: &LiftedSet, config: &AesindyConfig) -> Result<(AesindyModel, TrainReport)> {
    let mut model = AesindyModel::new(config.clone(), data.x.cols())?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.store,
    );
    let mut rng = split_rng(config.seed, 1);
    let mut history = Vec::with_capacity(config.epochs);
    let n = data.x.rows().max(1) as f64;
    for epoch in 1..=config.epochs {
        let mut acc = LossTerms {
            total: 0.0,
            recon: 0.0,
            sindy_x: 0.0,
            sindy_z: 0.0,
            l1: 0.0,
        };
        for batch in shuffled_batches(data.x.rows(), config.batch_size, &mut rng) {
            let x = data.x.select_rows(&batch);
            let xd = data.xdot.select_rows(&batch);
            let mut g = Graph::new();
            let nodes = model.loss_graph(&mut g, &model.store, &x, &xd)?;
            let t = nodes.read(&g);
            check_loss(epoch, t.total)?;
            let w = batch.len() as f64 / n;
            acc.total += t.total * w;
            acc.recon += t.recon * w;
            acc.sindy_x += t.sindy_x * w;
            acc.sindy_z += t.sindy_z * w;
            acc.l1 += t.l1 * w;
            let grads = g.backward(nodes.total)?;
            adam.step(&mut model.store, grads.params())?;
            model.enforce_mask();
        }
        if epoch > config.threshold_warmup
            && (epoch - config.threshold_warmup) % config.threshold_every == 0
        {
            model.apply_threshold(config.threshold);
        }
        history.push(EpochStats {
            epoch,
            terms: acc,
            active: model.active_count(),
        });
    }
    Ok((model, TrainReport { history }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::Rng;

    fn tiny() -> AesindyConfig {
        AesindyConfig {
            lambda1: 0.3,
            lambda2: 0.7,
            lambda3: 0.05,
            hidden: vec![4],
            library: LibraryConfig {
                poly_degree: 2,
                trig: false,
                pair_sqrt: true,
                unary_sqrt: false,
            },
            epochs: 3,
            batch_size: 8,
            seed: 2,
            ..Default::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = split_rng(seed, 0);
        Tensor::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    fn randomize_xi(model: &mut AesindyModel, seed: u64) {
        let shape = model.store.get(model.xi).shape();
        *model.store.get_mut(model.xi) = random(shape[0], shape[1], seed);
    }

    /// Replaces a 2-layer network's weights by an exact linear map `A`.
    fn make_linear(model: &mut AesindyModel, which: &Mlp, a: &Tensor) {
        let (first, last) = (&which.layers[0], which.layers.last().unwrap());
        assert_eq!(which.layers.len(), 1);
        assert_eq!(first.w, last.w);
        *model.store.get_mut(first.w) = a.clone();
        *model.store.get_mut(first.b) = Tensor::zeros(1, a.rows());
    }

    #[test]
    fn latent_derivative_of_linear_encoder() {
        let cfg = AesindyConfig {
            hidden: vec![],
            ..tiny()
        };
        let mut model = AesindyModel::new(cfg, 4).unwrap();
        let a = random(3, 4, 5);
        let enc = model.encoder.clone();
        make_linear(&mut model, &enc, &a);
        let x = random(6, 4, 1);
        let xd = random(6, 4, 2);
        let (z, zd) = model.latent_state_and_derivative(&x, &xd).unwrap();
        let (ez, ezd) = (x.matmul_t(&a), xd.matmul_t(&a));
        for (u, v) in z
            .data()
            .iter()
            .chain(zd.data())
            .zip(ez.data().iter().chain(ezd.data()))
        {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn latent_derivative_matches_path_difference() {
        let model = AesindyModel::new(tiny(), 4).unwrap();
        // Path x(t) = x0 + t·v + t²·w; ẋ(0) = v.
        let x0 = random(1, 4, 3);
        let v = random(1, 4, 4);
        let w = random(1, 4, 5);
        let at = |t: f64| {
            x0.zip_map(&v, |a, b| a + t * b)
                .zip_map(&w, |a, b| a + t * t * b)
        };
        let (_, zd) = model.latent_state_and_derivative(&x0, &v).unwrap();
        let h = 1e-5;
        let up = model.encode(&at(h)).unwrap();
        let down = model.encode(&at(-h)).unwrap();
        for k in 0..3 {
            let fd = (up.get(0, k) - down.get(0, k)) / (2.0 * h);
            assert!(
                (fd - zd.get(0, k)).abs() <= 1e-4 * fd.abs().max(1e-3),
                "{fd} vs {}",
                zd.get(0, k)
            );
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut model = AesindyModel::new(tiny(), 4).unwrap();
        randomize_xi(&mut model, 7);
        model.mask[1] = false;
        model.enforce_mask();
        let x = random(5, 4, 8);
        let xd = random(5, 4, 9);
        let report = gradcheck::check_params(&model.store, gradcheck::DEFAULT_STEP, |g, s| {
            model.loss_graph(g, s, &x, &xd).unwrap().total
        });
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn terms_decompose_and_reduce_without_weights() {
        let mut model = AesindyModel::new(tiny(), 4).unwrap();
        randomize_xi(&mut model, 1);
        let x = random(7, 4, 2);
        let xd = random(7, 4, 3);
        let t = model.loss(&x, &xd).unwrap();
        let c = &model.config;
        let sum = t.recon + c.lambda1 * t.sindy_x + c.lambda2 * t.sindy_z + c.lambda3 * t.l1;
        assert!((t.total - sum).abs() < 1e-12);
        assert!(t.recon >= 0.0 && t.sindy_x >= 0.0 && t.sindy_z >= 0.0 && t.l1 >= 0.0);
        model.config.lambda1 = 0.0;
        model.config.lambda2 = 0.0;
        model.config.lambda3 = 0.0;
        let plain = model.loss(&x, &xd).unwrap();
        assert_eq!(plain.total, plain.recon);
    }

    #[test]
    fn perfect_static_autoencoder_has_zero_loss() {
        // Identity encoder and decoder, Ξ = 0, data at rest.
        let cfg = AesindyConfig {
            hidden: vec![],
            ..tiny()
        };
        let mut model = AesindyModel::new(cfg, 3).unwrap();
        let (enc, dec) = (model.encoder.clone(), model.decoder.clone());
        make_linear(&mut model, &enc, &Tensor::identity(3));
        make_linear(&mut model, &dec, &Tensor::identity(3));
        let x = random(4, 3, 0);
        let t = model.loss(&x, &Tensor::zeros(4, 3)).unwrap();
        assert_eq!(t.total, 0.0);
    }

    #[test]
    fn identity_roundtrip_follows_linear_closed_form() {
        // ż = −0.5 z on identity coordinates decays as e^{−0.5 t}.
        let cfg = AesindyConfig {
            hidden: vec![],
            ..tiny()
        };
        let mut model = AesindyModel::new(cfg, 3).unwrap();
        let (enc, dec) = (model.encoder.clone(), model.decoder.clone());
        make_linear(&mut model, &enc, &Tensor::identity(3));
        make_linear(&mut model, &dec, &Tensor::identity(3));
        let names = model.library.names();
        let xi = model.store.get_mut(model.xi);
        for (k, v) in ["z1", "z2", "z3"].iter().enumerate() {
            let j = names.iter().position(|n| n == v).unwrap();
            xi.set(j, k, -0.5);
        }
        model.apply_threshold(0.01);
        let dt = 0.1;
        let x0 = [1.0, -2.0, 0.5];
        let truth: Vec<Vec<f64>> = (0..=30)
            .map(|s| {
                x0.iter()
                    .map(|v| v * (-0.5 * s as f64 * dt).exp())
                    .collect()
            })
            .collect();
        let rt = roundtrip_eval(&model, &Tensor::from_rows(&truth).unwrap(), dt).unwrap();
        for (a, b) in rt
            .predicted
            .data()
            .iter()
            .zip(Tensor::from_rows(&truth).unwrap().data())
        {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(rt.relative_mse < 1e-6);
        assert_eq!(model.dynamic_latents(), 3);
    }

    #[test]
    fn zero_step_roundtrip_is_reconstruction() {
        let model = AesindyModel::new(tiny(), 4).unwrap();
        let x0 = random(1, 4, 6);
        let rt = roundtrip_eval(&model, &x0, 0.5).unwrap();
        let recon = model.decode(&model.encode(&x0).unwrap()).unwrap();
        assert_eq!(rt.predicted, recon);
    }

    #[test]
    fn thresholding_masks_permanently() {
        let mut model = AesindyModel::new(tiny(), 4).unwrap();
        randomize_xi(&mut model, 3);
        let before = model.active_count();
        let newly = model.apply_threshold(0.5);
        assert!(newly > 0);
        assert_eq!(model.active_count(), before - newly);
        let masked: Vec<usize> = (0..model.mask.len()).filter(|&i| !model.mask[i]).collect();
        let data = crate::data::LiftedSet {
            x: random(16, 4, 1),
            xdot: random(16, 4, 2),
            z_true: Tensor::zeros(16, 3),
            scale: 1.0,
            ic_id: vec![0; 16],
        };
        let mut adam = Adam::new(AdamConfig::default(), &model.store);
        for _ in 0..5 {
            let mut g = Graph::new();
            let nodes = model
                .loss_graph(&mut g, &model.store, &data.x, &data.xdot)
                .unwrap();
            let grads = g.backward(nodes.total).unwrap();
            adam.step(&mut model.store, grads.params()).unwrap();
            model.enforce_mask();
            for &i in &masked {
                assert_eq!(
                    model.store.get(model.xi).data()[i].to_bits(),
                    0f64.to_bits()
                );
            }
        }
    }

    #[test]
    fn training_determinism_zero_epochs_and_checkpoint() {
        let data = crate::data::LiftedSet {
            x: random(24, 4, 1),
            xdot: random(24, 4, 2),
            z_true: Tensor::zeros(24, 3),
            scale: 1.0,
            ic_id: vec![0; 24],
        };
        let zero = AesindyConfig {
            epochs: 0,
            ..tiny()
        };
        let (m0, _) = train(&data, &zero).unwrap();
        assert_eq!(m0, AesindyModel::new(zero, 4).unwrap());
        let cfg = AesindyConfig {
            threshold_warmup: 1,
            threshold_every: 1,
            ..tiny()
        };
        let (a, ra) = train(&data, &cfg).unwrap();
        let (b, _) = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.history.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.json");
        a.save(&path).unwrap();
        assert_eq!(AesindyModel::load(&path).unwrap(), a);
    }
}
