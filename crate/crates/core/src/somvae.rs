//! Discrete state identification with a self-organising embedding grid.
//!
//! Windows are encoded to `z_e`, snapped to the nearest grid embedding `z_q`,
//! and decoded from both. The SOM term pulls the grid neighbours of the
//! selected cell towards a stopped copy of `z_e`, so neighbouring cells end up
//! representing similar windows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Phase, PhaseStream, Scaler, StateSet};
use crate::error::{Error, Result};
use crate::nn::{
    self, check_loss, shuffled_batches, standard_normal, Activation, Adam, AdamConfig, Checkpoint,
    Graph, Mlp, NodeId, ParamId, ParamStore, Tensor,
};
use crate::split_rng;

/// Rectangular grid with 4-adjacency; cells are numbered row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SomGrid {
    pub rows: usize,
    pub cols: usize,
}

impl Default for SomGrid {
    fn default() -> Self {
        Self { rows: 2, cols: 3 }
    }
}

impl SomGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "grid must be non-empty, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn neighbors(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.len() {
            return Err(Error::Config(format!(
                "cell {index} outside a grid of {}",
                self.len()
            )));
        }
        let (r, c) = self.coords(index);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(index - self.cols);
        }
        if c > 0 {
            out.push(index - 1);
        }
        if c + 1 < self.cols {
            out.push(index + 1);
        }
        if r + 1 < self.rows {
            out.push(index + self.cols);
        }
        Ok(out)
    }
}

/// Index of the embedding row closest to `z` (lowest index on ties).
pub fn nearest_embedding(z: &[f64], embeddings: &Tensor) -> usize {
    let mut best = (0, f64::INFINITY);
    for k in 0..embeddings.rows() {
        let d: f64 = embeddings
            .row(k)
            .iter()
            .zip(z)
            .map(|(e, v)| (e - v) * (e - v))
            .sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomVaeConfig {
    pub grid: SomGrid,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Commitment weight.
    pub alpha: f64,
    /// SOM neighbourhood weight.
    pub beta: f64,
    /// Separate decoders for `z_e` and `z_q` instead of one shared decoder.
    pub two_decoders: bool,
    pub init_embedding_std: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SomVaeConfig {
    fn default() -> Self {
        Self {
            grid: SomGrid::default(),
            latent_dim: 16,
            hidden: vec![128, 64],
            alpha: 1.0,
            beta: 0.9,
            two_decoders: false,
            init_embedding_std: 0.05,
            epochs: 10,
            lr: 1e-3,
            batch_size: nn::DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl SomVaeConfig {
    pub fn validate(&self) -> Result<()> {
        SomGrid::new(self.grid.rows, self.grid.cols)?;
        if self.latent_dim == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "latent_dim, batch_size and hidden sizes must be positive".into(),
            ));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("init_embedding_std", self.init_embedding_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
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
pub struct SomVaeModel {
    pub config: SomVaeConfig,
    pub input_dim: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Decoder for `z_q` in two-decoder mode.
    pub decoder_q: Option<Mlp>,
    /// `cells × latent_dim`.
    pub embeddings: ParamId,
    pub store: ParamStore,
}

/// Batch-averaged loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SomVaeTerms {
    pub total: f64,
    pub recon_q: f64,
    pub recon_e: f64,
    pub commitment: f64,
    pub som: f64,
}

#[derive(Debug, Clone)]
pub struct LossNodes {
    pub total: NodeId,
    pub recon_q: NodeId,
    pub recon_e: NodeId,
    pub commitment: NodeId,
    pub som: NodeId,
    /// Selected cell per row.
    pub assignment: Vec<usize>,
}

impl LossNodes {
    pub fn terms(&self, g: &Graph) -> SomVaeTerms {
        SomVaeTerms {
            total: g.scalar(self.total),
            recon_q: g.scalar(self.recon_q),
            recon_e: g.scalar(self.recon_e),
            commitment: g.scalar(self.commitment),
            som: g.scalar(self.som),
        }
    }
}

impl SomVaeModel {
    pub fn new(config: SomVaeConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = split_rng(config.seed, 0);
        let mut store = ParamStore::new();
        let m = config.latent_dim;
        let mut enc_sizes = vec![input_dim];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(m);
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
        let decoder_q = config.two_decoders.then(|| {
            Mlp::new(
                &mut store,
                "decoder_q",
                &dec_sizes,
                Activation::Tanh,
                Activation::Identity,
                &mut rng,
            )
        });
        let mut emb = standard_normal(config.grid.len(), m, &mut rng);
        for v in emb.data_mut() {
            *v *= config.init_embedding_std;
        }
        let embeddings = store.add("embeddings", emb);
        Ok(Self {
            config,
            input_dim,
            encoder,
            decoder,
            decoder_q,
            embeddings,
            store,
        })
    }

    pub fn grid(&self) -> SomGrid {
        self.config.grid
    }

    pub fn embedding_matrix(&self) -> &Tensor {
        self.store.get(self.embeddings)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(
                "somvae window",
                &[self.input_dim],
                &[x.cols()],
            ));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder.eval(&self.store, x)
    }

    /// Selected cell for each row of `x`.
    pub fn assign(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.encode(x)?;
        let emb = self.embedding_matrix();
        Ok((0..z.rows())
            .map(|r| nearest_embedding(z.row(r), emb))
            .collect())
    }

    fn q_decoder(&self) -> &Mlp {
        self.decoder_q.as_ref().unwrap_or(&self.decoder)
    }

    /// Records the loss for a batch.
    ///
    /// `z_q` is gathered from the embedding parameter, so the `X̂_q` branch
    /// reaches the decoder and the selected cells but not the encoder.
    pub fn loss_graph(&self, g: &mut Graph, store: &ParamStore, x: &Tensor) -> Result<LossNodes> {
        self.check_input(x)?;
        let n = x.rows().max(1) as f64;
        let xn = g.constant(x.clone());
        let ze = self.encoder.forward(g, store, xn)?;
        let emb = g.param(store, self.embeddings);
        let assignment: Vec<usize> = {
            let (zv, ev) = (g.value(ze), g.value(emb));
            (0..zv.rows())
                .map(|r| nearest_embedding(zv.row(r), ev))
                .collect()
        };
        let zq = g.gather_rows(emb, &assignment);

        let xq = self.q_decoder().forward(g, store, zq)?;
        let xe = self.decoder.forward(g, store, ze)?;
        let recon_q = nn::mse(g, xq, xn);
        let recon_e = nn::mse(g, xe, xn);
        let commitment = nn::mean_row_sq_error(g, ze, zq);

        let grid = self.grid();
        let (mut cells, mut rows) = (Vec::new(), Vec::new());
        for (r, &k) in assignment.iter().enumerate() {
            for nb in grid.neighbors(k)? {
                cells.push(nb);
                rows.push(r);
            }
        }
        let ze_stopped = g.stop_gradient(ze);
        let nbs = g.gather_rows(emb, &cells);
        let targets = g.gather_rows(ze_stopped, &rows);
        let diff = g.sub(nbs, targets);
        let sq = g.square(diff);
        let s = g.sum(sq);
        let som = g.scale(s, 1.0 / n);

        let recon = g.add(recon_q, recon_e);
        let wc = g.scale(commitment, self.config.alpha);
        let ws = g.scale(som, self.config.beta);
        let t = g.add(recon, wc);
        let total = g.add(t, ws);
        Ok(LossNodes {
            total,
            recon_q,
            recon_e,
            commitment,
            som,
            assignment,
        })
    }

    pub fn loss(&self, x: &Tensor) -> Result<SomVaeTerms> {
        let mut g = Graph::new();
        Ok(self.loss_graph(&mut g, &self.store, x)?.terms(&g))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            &self.store,
            serde_json::json!({
                "model": "somvae",
                "input_dim": self.input_dim,
                "config": self.config,
            }),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: SomVaeConfig = serde_json::from_value(ckpt.manifest["config"].clone())?;
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

/// Flattens the window ending at each listed row of `levels` (already scaled).
pub fn windows_ending_at(levels: &Tensor, ends: &[usize], window_len: usize) -> Result<Tensor> {
    let c = levels.cols();
    let mut data = Vec::with_capacity(ends.len() * window_len * c);
    for &t in ends {
        if t + 1 < window_len || t >= levels.rows() {
            return Err(Error::Config(format!(
                "no window of length {window_len} ends at row {t}"
            )));
        }
        for r in t + 1 - window_len..=t {
            data.extend_from_slice(levels.row(r));
        }
    }
    Tensor::new(ends.len(), window_len * c, data)
}

/// Standardised training windows of a state set, one per row.
pub fn training_windows(set: &StateSet) -> Result<Tensor> {
    let scaled = set.scaler.transform(&set.stream.levels);
    let w = set.config.window_len;
    let ends: Vec<usize> = set.window_starts.iter().map(|s| s + w - 1).collect();
    windows_ending_at(&scaled, &ends, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub terms: SomVaeTerms,
    /// Selection count per cell over the epoch.
    pub usage: Vec<usize>,
    /// Cells never selected during the epoch.
    pub dead_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial: SomVaeTerms,
    pub final_terms: SomVaeTerms,
    pub history: Vec<EpochStats>,
}

impl TrainReport {
    pub fn dead_states(&self) -> &[usize] {
        self.history
            .last()
            .map_or(&[], |h| h.dead_states.as_slice())
    }
}

pub fn train(set: &StateSet, config: &SomVaeConfig) -> Result<(SomVaeModel, TrainReport)> {
    train_on(&training_windows(set)?, config)
}

pub fn train_on(x: &Tensor, config: &SomVaeConfig) -> Result<(SomVaeModel, TrainReport)> {
    let mut model = SomVaeModel::new(config.clone(), x.cols())?;
    let initial = model.loss(x)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.store,
    );
    let mut rng = split_rng(config.seed, 1);
    let cells = config.grid.len();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut acc = SomVaeTerms::default();
        let mut usage = vec![0usize; cells];
        for batch in shuffled_batches(x.rows(), config.batch_size, &mut rng) {
            let xb = x.select_rows(&batch);
            let mut g = Graph::new();
            let nodes = model.loss_graph(&mut g, &model.store, &xb)?;
            let t = nodes.terms(&g);
            check_loss(epoch, t.total)?;
            let w = batch.len() as f64;
            acc.total += t.total * w;
            acc.recon_q += t.recon_q * w;
            acc.recon_e += t.recon_e * w;
            acc.commitment += t.commitment * w;
            acc.som += t.som * w;
            for &k in &nodes.assignment {
                usage[k] += 1;
            }
            let grads = g.backward(nodes.total)?;
            adam.step(&mut model.store, grads.params())?;
        }
        let n = x.rows().max(1) as f64;
        let terms = SomVaeTerms {
            total: acc.total / n,
            recon_q: acc.recon_q / n,
            recon_e: acc.recon_e / n,
            commitment: acc.commitment / n,
            som: acc.som / n,
        };
        let dead_states = (0..cells).filter(|&k| usage[k] == 0).collect();
        history.push(EpochStats {
            epoch,
            terms,
            usage,
            dead_states,
        });
    }
    let final_terms = model.loss(x)?;
    Ok((
        model,
        TrainReport {
            initial,
            final_terms,
            history,
        },
    ))
}

/// Per-step predicted cells and true phases for a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTimeline {
    /// Stream row of the first prediction (`window_len − 1`).
    pub start: usize,
    pub predicted: Vec<usize>,
    pub truth: Vec<Phase>,
}

impl StateTimeline {
    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn truth_indices(&self) -> Vec<usize> {
        self.truth.iter().map(|p| p.index()).collect()
    }
}

/// Causal prediction: the state at row `t` uses only rows `t − w + 1 ..= t`.
pub fn predict_states(
    model: &SomVaeModel,
    stream: &PhaseStream,
    scaler: &Scaler,
    window_len: usize,
) -> Result<StateTimeline> {
    if stream.len() < window_len || window_len == 0 {
        return Err(Error::Config(format!(
            "stream of {} rows is shorter than the window ({window_len})",
            stream.len()
        )));
    }
    let scaled = scaler.transform(&stream.levels);
    let ends: Vec<usize> = (window_len - 1..stream.len()).collect();
    let mut predicted = Vec::with_capacity(ends.len());
    for chunk in ends.chunks(1024) {
        predicted.extend(model.assign(&windows_ending_at(&scaled, chunk, window_len)?)?);
    }
    Ok(StateTimeline {
        start: window_len - 1,
        predicted,
        truth: stream.phases[window_len - 1..].to_vec(),
    })
}
