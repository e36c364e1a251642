//! Experiment datasets built from simulated three-tank runs.
//!
//! Every generator is a pure function of its config and seed. Per-series
//! randomness comes from [`crate::split_rng`], so series `i` is the same no
//! matter how many series are generated or in which order.

mod io;
pub mod lift;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::sim::{self, Segment, SystemState, TankParams, Trajectory};
use crate::split_rng;

pub use lift::{lift_derivative, monomial_exponents, poly_lift, LIFT_DIM};

/// Fixed-length slice of sensor readings, `s × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Tensor,
    pub dt: f64,
}

impl Window {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        let rows = t.to_rows();
        Self {
            values: Tensor::from_rows(&rows).expect("3 columns"),
            dt: t.dt,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Row-major flattening, time-major then channel.
    pub fn flatten(&self) -> &[f64] {
        self.values.data()
    }
}

/// Closed interval `[lo, hi]` for one sampled quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi || self.lo < 0.0 {
            return Err(Error::Domain(format!(
                "invalid interval for {name}: [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Sampling intervals for `(q1, q3, kv12, kv23)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptRanges {
    pub q1: Interval,
    pub q3: Interval,
    pub kv12: Interval,
    pub kv23: Interval,
}

impl Default for ConceptRanges {
    fn default() -> Self {
        Self {
            q1: Interval::new(0.5, 2.5),
            q3: Interval::new(0.5, 2.5),
            kv12: Interval::new(0.3, 1.5),
            kv23: Interval::new(0.3, 1.5),
        }
    }
}

impl ConceptRanges {
    pub fn validate(&self) -> Result<()> {
        self.q1.validate("q1")?;
        self.q3.validate("q3")?;
        self.kv12.validate("kv12")?;
        self.kv23.validate("kv23")?;
        if self.q1.lo <= 0.0 || self.q3.lo <= 0.0 {
            return Err(Error::Domain(
                "inflow intervals must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

pub const CONCEPT_NAMES: [&str; 4] = ["q1", "q3", "kv12", "kv23"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConceptSetConfig {
    pub count: usize,
    pub seq_len: usize,
    pub dt: f64,
    pub x0: [f64; 3],
    pub ranges: ConceptRanges,
    pub kv3: f64,
    pub c: f64,
    /// Fraction of series held out for validation.
    pub val_fraction: f64,
}

impl Default for ConceptSetConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            seq_len: 50,
            dt: sim::DEFAULT_DT,
            x0: [30.0, 10.0, 90.0],
            ranges: ConceptRanges::default(),
            kv3: sim::DEFAULT_KV3,
            c: sim::DEFAULT_C,
            val_fraction: 0.1,
        }
    }
}

impl ConceptSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be at least 2".into()));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        self.ranges.validate()
    }

    pub fn params_for(&self, concepts: [f64; 4]) -> TankParams {
        TankParams {
            q1: concepts[0],
            q3: concepts[1],
            kv12: concepts[2],
            kv23: concepts[3],
            kv3: self.kv3,
            c: self.c,
        }
    }
}

/// Per-channel standardisation `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits channel statistics over the rows of the given matrices.
    pub fn fit<'a>(blocks: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sumsq: Vec<f64> = Vec::new();
        let blocks: Vec<&Tensor> = blocks.into_iter().collect();
        for t in &blocks {
            if sum.is_empty() {
                sum = vec![0.0; t.cols()];
            }
            for r in 0..t.rows() {
                for (c, v) in t.row(r).iter().enumerate() {
                    sum[c] += v;
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
        sumsq.resize(mean.len(), 0.0);
        for t in &blocks {
            for r in 0..t.rows() {
                for (c, v) in t.row(r).iter().enumerate() {
                    sumsq[c] += (v - mean[c]).powi(2);
                }
            }
        }
        let std = sumsq
            .iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn transform(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn inverse(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

/// Seeded train/validation partition of series indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, val_fraction: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut split_rng(seed, u64::MAX));
        let n_val = ((n as f64) * val_fraction).round() as usize;
        let n_val = n_val.min(n.saturating_sub(1));
        let mut val = idx[..n_val].to_vec();
        let mut train = idx[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Self { train, val }
    }
}

/// Windows labelled with the concepts `(q1, q3, kv12, kv23)` that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptLabeledSet {
    pub config: ConceptSetConfig,
    pub seed: u64,
    pub windows: Vec<Window>,
    pub concepts: Vec<[f64; 4]>,
    pub split: Split,
    /// Channel statistics of the training split.
    pub scaler: Scaler,
}

impl ConceptLabeledSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Standardised windows flattened into an `N × (s·n)` matrix.
    pub fn standardized_matrix(&self, idx: &[usize]) -> Tensor {
        let width = self.config.seq_len * 3;
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(self.scaler.transform(&self.windows[i].values).data());
        }
        Tensor::new(idx.len(), width, data).expect("window width")
    }

    pub fn concept_matrix(&self, idx: &[usize]) -> Tensor {
        let rows: Vec<[f64; 4]> = idx.iter().map(|&i| self.concepts[i]).collect();
        Tensor::from_rows(&rows).expect("4 concepts")
    }
}

/// Simulates `count` series from a shared initial state with independently
/// sampled concepts.
pub fn gen_concept_set(config: &ConceptSetConfig, seed: u64) -> Result<ConceptLabeledSet> {
    config.validate()?;
    let x0 = SystemState::from_array(config.x0);
    let mut windows = Vec::with_capacity(config.count);
    let mut concepts = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mut rng = split_rng(seed, i as u64);
        let r = &config.ranges;
        let c = [
            r.q1.sample(&mut rng),
            r.q3.sample(&mut rng),
            r.kv12.sample(&mut rng),
            r.kv23.sample(&mut rng),
        ];
        let traj = sim::simulate(x0, &config.params_for(c), config.dt, config.seq_len - 1)?;
        windows.push(Window::from_trajectory(&traj));
        concepts.push(c);
    }
    let split = Split::new(config.count, config.val_fraction, seed);
    let scaler = Scaler::fit(split.train.iter().map(|&i| &windows[i].values));
    Ok(ConceptLabeledSet {
        config: config.clone(),
        seed,
        windows,
        concepts,
        split,
        scaler,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub h_max: f64,
    /// Total volume below which the system counts as drained.
    pub drain_eps: f64,
    pub drain_budget: usize,
    /// Integration sub-steps per data step in the drain simulation. At the
    /// data step the clamped RK4 map has spurious fixed points a little above
    /// empty, so the drain is resolved more finely.
    pub drain_substeps: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            h_max: sim::DEFAULT_H_MAX,
            drain_eps: 0.1,
            drain_budget: 1_000_000,
            drain_substeps: 10,
        }
    }
}

/// Concept-labelled windows plus the four answers.
#[derive(Debug, Clone, PartialEq)]
pub struct QASet {
    pub base: ConceptLabeledSet,
    pub qa: QaConfig,
    /// `(a1, a2, a3, a4)`: fill times of tanks 1 and 3, drain times starting
    /// from a full tank 1 and a full tank 2.
    pub answers: Vec<[f64; 4]>,
}

impl QASet {
    pub fn answer_matrix(&self, idx: &[usize]) -> Tensor {
        let rows: Vec<[f64; 4]> = idx.iter().map(|&i| self.answers[i]).collect();
        Tensor::from_rows(&rows).expect("4 answers")
    }
}

/// Time for an empty tank to fill to `h_max` at inflow `q` with closed valves.
pub fn fill_time(q: f64, c: f64, h_max: f64) -> f64 {
    c * h_max / q
}

/// Time until total volume drops below `eps`, starting from `x0` with the given
/// valves open. The crossing is interpolated linearly within the last step.
pub fn drain_time(
    x0: SystemState,
    params: &TankParams,
    dt: f64,
    eps: f64,
    budget: usize,
) -> Result<f64> {
    let mut state = x0;
    let mut prev_total = state.total();
    if prev_total < eps {
        return Ok(0.0);
    }
    for k in 1..=budget {
        state = sim::rk4_step(state, params, dt)?;
        let total = state.total();
        if total < eps {
            let frac = (prev_total - eps) / (prev_total - total);
            return Ok((k as f64 - 1.0 + frac) * dt);
        }
        prev_total = total;
    }
    Err(Error::StepBudget { budget })
}

/// Answers to the four questions for one concept draw.
pub fn answers_for(
    config: &ConceptSetConfig,
    qa: &QaConfig,
    concepts: [f64; 4],
) -> Result<[f64; 4]> {
    let p = config.params_for(concepts);
    let a1 = fill_time(p.q1, p.c, qa.h_max);
    let a2 = fill_time(p.q3, p.c, qa.h_max);
    let drain = TankParams {
        q1: 0.0,
        q3: 0.0,
        ..p
    };
    let dt = config.dt / qa.drain_substeps.max(1) as f64;
    let a3 = drain_time(
        SystemState::new(qa.h_max, 0.0, 0.0),
        &drain,
        dt,
        qa.drain_eps,
        qa.drain_budget,
    )?;
    let a4 = drain_time(
        SystemState::new(0.0, qa.h_max, 0.0),
        &drain,
        dt,
        qa.drain_eps,
        qa.drain_budget,
    )?;
    Ok([a1, a2, a3, a4])
}

pub fn gen_qa_set(config: &ConceptSetConfig, qa: &QaConfig, seed: u64) -> Result<QASet> {
    if !(qa.h_max > 0.0 && qa.drain_eps > 0.0) || qa.drain_substeps == 0 {
        return Err(Error::Config(
            "h_max, drain_eps and drain_substeps must be positive".into(),
        ));
    }
    let base = gen_concept_set(config, seed)?;
    let answers = base
        .concepts
        .iter()
        .map(|&c| answers_for(config, qa, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(QASet {
        base,
        qa: qa.clone(),
        answers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeSource {
    /// Evaluate the level dynamics at each sample.
    Exact,
    /// Central differences along each simulated run.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SindySetConfig {
    pub num_ic: usize,
    pub steps: usize,
    pub dt: f64,
    /// Initial levels are drawn uniformly from this box in every tank.
    pub ic_box: Interval,
    pub kv12: f64,
    pub kv23: f64,
    pub kv3: f64,
    pub c: f64,
    pub derivatives: DerivativeSource,
}

impl Default for SindySetConfig {
    fn default() -> Self {
        Self {
            num_ic: 1000,
            steps: 50,
            dt: sim::DEFAULT_DT,
            ic_box: Interval::new(10.0, 90.0),
            kv12: 1.0,
            kv23: 1.0,
            kv3: sim::DEFAULT_KV3,
            c: sim::DEFAULT_C,
            derivatives: DerivativeSource::Exact,
        }
    }
}

impl SindySetConfig {
    pub fn params(&self) -> TankParams {
        TankParams {
            q1: 0.0,
            q3: 0.0,
            kv12: self.kv12,
            kv23: self.kv23,
            kv3: self.kv3,
            c: self.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ic == 0 || self.steps == 0 {
            return Err(Error::Config("num_ic and steps must be at least 1".into()));
        }
        if self.derivatives == DerivativeSource::Numerical && self.steps < 2 {
            return Err(Error::Config(
                "numerical derivatives need at least 2 steps".into(),
            ));
        }
        self.ic_box.validate("ic_box")?;
        self.params().validate()
    }
}

/// Free-drainage runs as `(x, ẋ)` sample rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SindySet {
    pub config: SindySetConfig,
    pub seed: u64,
    /// `N × 3` levels, `steps` rows per initial condition.
    pub x: Tensor,
    pub xdot: Tensor,
    /// Initial condition each row belongs to.
    pub ic_id: Vec<usize>,
}

impl SindySet {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Rows belonging to the listed initial conditions.
    pub fn rows_for(&self, ics: &[usize]) -> Vec<usize> {
        (0..self.ic_id.len())
            .filter(|&r| ics.contains(&self.ic_id[r]))
            .collect()
    }
}

pub fn sample_initial_state<R: Rng>(ic_box: &Interval, rng: &mut R) -> SystemState {
    SystemState::new(ic_box.sample(rng), ic_box.sample(rng), ic_box.sample(rng))
}

pub fn gen_sindy_set(config: &SindySetConfig, seed: u64) -> Result<SindySet> {
    config.validate()?;
    let params = config.params();
    let n = config.num_ic * config.steps;
    let mut x = Vec::with_capacity(n * 3);
    let mut xdot = Vec::with_capacity(n * 3);
    let mut ic_id = Vec::with_capacity(n);
    for i in 0..config.num_ic {
        let x0 = sample_initial_state(&config.ic_box, &mut split_rng(seed, i as u64));
        let traj = sim::simulate(x0, &params, config.dt, config.steps)?;
        let numeric = match config.derivatives {
            DerivativeSource::Numerical => Some(numerical_derivative(&traj)?),
            DerivativeSource::Exact => None,
        };
        for (k, s) in traj.states.iter().take(config.steps).enumerate() {
            x.extend_from_slice(&s.to_array());
            let d = match &numeric {
                Some(m) => [m.get(k, 0), m.get(k, 1), m.get(k, 2)],
                None => sim::derivatives(*s, &params)?,
            };
            xdot.extend_from_slice(&d);
            ic_id.push(i);
        }
    }
    Ok(SindySet {
        config: config.clone(),
        seed,
        x: Tensor::new(n, 3, x)?,
        xdot: Tensor::new(n, 3, xdot)?,
        ic_id,
    })
}

/// Second-order finite differences along rows: central in the interior,
/// one-sided three-point stencils at both ends.
pub fn finite_difference(values: &Tensor, dt: f64) -> Result<Tensor> {
    let (s, n) = (values.rows(), values.cols());
    if s < 3 {
        return Err(Error::Domain(format!(
            "finite differences need at least 3 samples, got {s}"
        )));
    }
    let mut out = Tensor::zeros(s, n);
    for c in 0..n {
        let v = |r: usize| values.get(r, c);
        out.set(0, c, (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dt));
        for r in 1..s - 1 {
            out.set(r, c, (v(r + 1) - v(r - 1)) / (2.0 * dt));
        }
        out.set(
            s - 1,
            c,
            (3.0 * v(s - 1) - 4.0 * v(s - 2) + v(s - 3)) / (2.0 * dt),
        );
    }
    Ok(out)
}

/// Finite-difference level derivatives of a trajectory, `len × 3`.
pub fn numerical_derivative(traj: &Trajectory) -> Result<Tensor> {
    finite_difference(&Window::from_trajectory(traj).values, traj.dt)
}

/// Default divisor mapping levels into `[0, 1]` before the lift.
pub const DEFAULT_LIFT_SCALE: f64 = sim::DEFAULT_H_MAX;

/// High-dimensional observations `x = lift(h / scale)` with matching `ẋ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSet {
    pub x: Tensor,
    pub xdot: Tensor,
    /// Underlying levels in tank units.
    pub z_true: Tensor,
    pub scale: f64,
    pub ic_id: Vec<usize>,
}

impl LiftedSet {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> LiftedSet {
        LiftedSet {
            x: self.x.select_rows(rows),
            xdot: self.xdot.select_rows(rows),
            z_true: self.z_true.select_rows(rows),
            scale: self.scale,
            ic_id: rows.iter().map(|&r| self.ic_id[r]).collect(),
        }
    }
}

/// Lifts one level state into observation space.
pub fn lift_state(h: &[f64; 3], scale: f64) -> Vec<f64> {
    poly_lift(&[h[0] / scale, h[1] / scale, h[2] / scale])
}

pub fn lift_set(set: &SindySet, scale: f64) -> Result<LiftedSet> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config("lift scale must be positive".into()));
    }
    let n = set.len();
    let mut x = Vec::with_capacity(n * LIFT_DIM);
    let mut xdot = Vec::with_capacity(n * LIFT_DIM);
    for r in 0..n {
        let h = set.x.row(r);
        let hd = set.xdot.row(r);
        let z = [h[0] / scale, h[1] / scale, h[2] / scale];
        let zd = [hd[0] / scale, hd[1] / scale, hd[2] / scale];
        x.extend(poly_lift(&z));
        xdot.extend(lift_derivative(&z, &zd));
    }
    Ok(LiftedSet {
        x: Tensor::new(n, LIFT_DIM, x)?,
        xdot: Tensor::new(n, LIFT_DIM, xdot)?,
        z_true: set.x.clone(),
        scale,
        ic_id: set.ic_id.clone(),
    })
}

/// Operating phase of the cycling process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fill,
    Stop,
    Mix,
    Drain,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Fill, Phase::Stop, Phase::Mix, Phase::Drain];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Fill => "fill",
            Phase::Stop => "stop",
            Phase::Mix => "mix",
            Phase::Drain => "drain",
        }
    }

    pub fn from_name(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSetConfig {
    pub cycles: usize,
    /// Fill/stop/mix repetitions before the drain.
    pub sub_cycles: usize,
    pub fill_steps: usize,
    pub stop_steps: usize,
    pub mix_steps: usize,
    pub drain_steps: usize,
    pub dt: f64,
    pub x0: [f64; 3],
    pub fill: TankParams,
    pub stop: TankParams,
    pub mix: TankParams,
    pub drain: TankParams,
    pub windows: usize,
    pub window_len: usize,
    /// Cycles in the held-out evaluation stream.
    pub test_cycles: usize,
}

impl Default for StateSetConfig {
    fn default() -> Self {
        let closed = TankParams::closed(sim::DEFAULT_C);
        Self {
            cycles: 100,
            sub_cycles: 3,
            fill_steps: 150,
            stop_steps: 100,
            mix_steps: 150,
            drain_steps: 250,
            dt: sim::DEFAULT_DT,
            x0: [0.0, 0.0, 0.0],
            fill: TankParams {
                q1: 0.2,
                q3: 0.2,
                ..closed
            },
            stop: closed,
            mix: TankParams {
                kv12: 0.5,
                kv23: 0.5,
                ..closed
            },
            drain: TankParams {
                kv12: 1.0,
                kv23: 1.0,
                kv3: 1.0,
                ..closed
            },
            windows: 10_000,
            window_len: 100,
            test_cycles: 10,
        }
    }
}

impl StateSetConfig {
    pub fn cycle_len(&self) -> usize {
        self.sub_cycles * (self.fill_steps + self.stop_steps + self.mix_steps) + self.drain_steps
    }

    /// One cycle as `(phase, segment)` pairs.
    pub fn cycle(&self) -> Vec<(Phase, Segment)> {
        let seg = |params: TankParams, steps: usize| Segment { params, steps };
        let mut out = Vec::with_capacity(3 * self.sub_cycles + 1);
        for _ in 0..self.sub_cycles {
            out.push((Phase::Fill, seg(self.fill, self.fill_steps)));
            out.push((Phase::Stop, seg(self.stop, self.stop_steps)));
            out.push((Phase::Mix, seg(self.mix, self.mix_steps)));
        }
        out.push((Phase::Drain, seg(self.drain, self.drain_steps)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.window_len < 2 || self.windows == 0 {
            return Err(Error::Config(
                "cycles, windows and window_len must be positive".into(),
            ));
        }
        if self.cycles * self.cycle_len() < self.window_len {
            return Err(Error::Config("stream is shorter than one window".into()));
        }
        for p in [&self.fill, &self.stop, &self.mix, &self.drain] {
            p.validate()?;
        }
        Ok(())
    }
}

/// Level stream labelled with phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStream {
    pub dt: f64,
    /// `len × 3` levels; row `i` is the state after step `i`.
    pub levels: Tensor,
    pub phases: Vec<Phase>,
    /// Schedule segment that produced each row.
    pub segment: Vec<usize>,
}

impl PhaseStream {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// Cycling-process dataset: training stream, sampled windows and a held-out stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub config: StateSetConfig,
    pub seed: u64,
    pub stream: PhaseStream,
    /// Start row of each training window in `stream`.
    pub window_starts: Vec<usize>,
    pub test_stream: PhaseStream,
    pub scaler: Scaler,
}

impl StateSet {
    pub fn window(&self, k: usize) -> Window {
        let s = self.window_starts[k];
        let rows: Vec<usize> = (s..s + self.config.window_len).collect();
        Window {
            values: self.stream.levels.select_rows(&rows),
            dt: self.stream.dt,
        }
    }

    /// Phase at the last step of window `k`.
    pub fn window_label(&self, k: usize) -> Phase {
        self.stream.phases[self.window_starts[k] + self.config.window_len - 1]
    }
}

pub fn simulate_phases(
    config: &StateSetConfig,
    x0: SystemState,
    cycles: usize,
) -> Result<PhaseStream> {
    let cycle = config.cycle();
    let mut segments = Vec::with_capacity(cycle.len() * cycles);
    let mut seg_phase = Vec::with_capacity(cycle.len() * cycles);
    for _ in 0..cycles {
        for (p, s) in &cycle {
            segments.push(*s);
            seg_phase.push(*p);
        }
    }
    let traj = sim::simulate_schedule(x0, &segments, config.dt)?;
    let rows: Vec<[f64; 3]> = traj.states[1..].iter().map(|s| s.to_array()).collect();
    let segment: Vec<usize> = traj.segment_index[1..].to_vec();
    Ok(PhaseStream {
        dt: config.dt,
        levels: Tensor::from_rows(&rows)?,
        phases: segment.iter().map(|&s| seg_phase[s]).collect(),
        segment,
    })
}

pub fn gen_state_set(config: &StateSetConfig, seed: u64) -> Result<StateSet> {
    config.validate()?;
    let stream = simulate_phases(config, SystemState::from_array(config.x0), config.cycles)?;
    let max_start = stream.len() - config.window_len;
    let mut rng = split_rng(seed, 0);
    let window_starts = (0..config.windows)
        .map(|_| rng.random_range(0..=max_start))
        .collect();
    let test_x0 = sample_initial_state(&Interval::new(0.0, 20.0), &mut split_rng(seed, 1));
    let test_stream = simulate_phases(config, test_x0, config.test_cycles.max(1))?;
    let scaler = Scaler::fit([&stream.levels]);
    Ok(StateSet {
        config: config.clone(),
        seed,
        stream,
        window_starts,
        test_stream,
        scaler,
    })
}

pub use io::{DatasetManifest, MANIFEST_SUFFIX};
