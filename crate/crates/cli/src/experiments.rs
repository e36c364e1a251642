//! In-memory dataset generation, fitting and evaluation for each module.
//!
//! The file-based pipeline and the acceptance suite both go through these
//! functions, so a metric means the same thing wherever it is reported.

use std::collections::BTreeMap;

use serde_json::json;

use conceptlab::aesindy::{self, AesindyModel};
use conceptlab::agents::{self, AgentsModel};
use conceptlab::bvae::{self, BvaeModel};
use conceptlab::data::{
    gen_concept_set, gen_qa_set, gen_sindy_set, gen_state_set, lift_set, ConceptLabeledSet,
    LiftedSet, QASet, SindySet, StateSet,
};
use conceptlab::eval::{self, CorrelationReport};
use conceptlab::nn::Tensor;
use conceptlab::sim;
use conceptlab::sindy::{self, CandidateLibrary, SindyModel, TANK_VARS};
use conceptlab::somvae::{self, SomVaeModel};

use crate::config::{Dataset, Module, RunConfig};
use crate::error::CliError;

pub const CONCEPT_NAMES: [&str; 4] = ["q1", "q3", "kv12", "kv23"];

/// Threshold for the one-latent-per-concept check.
pub const DISTINCT_THRESHOLD: f64 = 0.8;

pub enum Data {
    Concepts(ConceptLabeledSet),
    Qa(QASet),
    Sindy(SindySet),
    Lifted(LiftedSet),
    States(StateSet),
}

impl Data {
    pub fn dataset(&self) -> Dataset {
        match self {
            Data::Concepts(_) => Dataset::Concepts,
            Data::Qa(_) => Dataset::Qa,
            Data::Sindy(_) => Dataset::Sindy,
            Data::Lifted(_) => Dataset::Lifted,
            Data::States(_) => Dataset::States,
        }
    }
}

pub enum Trained {
    Bvae(BvaeModel),
    Agents(AgentsModel),
    Sindy(SindyModel),
    Aesindy(AesindyModel),
    Somvae(SomVaeModel),
}

/// Tidy CSV table backing a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotData {
    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)
            .map_err(|e| CliError::io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| CliError::io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: BTreeMap<String, f64>,
    pub details: serde_json::Value,
    pub plots: Vec<PlotData>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn generate(cfg: &RunConfig, dataset: Dataset) -> Result<Data, CliError> {
    let seed = cfg.seed;
    Ok(match dataset {
        Dataset::Concepts => Data::Concepts(gen_concept_set(&cfg.data.concepts, seed)?),
        Dataset::Qa => Data::Qa(gen_qa_set(&cfg.data.concepts, &cfg.data.qa, seed)?),
        Dataset::Sindy => Data::Sindy(gen_sindy_set(&cfg.data.sindy, seed)?),
        Dataset::Lifted => Data::Lifted(lift_set(
            &gen_sindy_set(&cfg.data.sindy, seed)?,
            cfg.data.lift_scale,
        )?),
        Dataset::States => Data::States(gen_state_set(&cfg.data.states, seed)?),
    })
}

fn wrong_data(module: Module, data: &Data) -> CliError {
    CliError::config(format!(
        "module {module} cannot use the {} dataset",
        data.dataset().name()
    ))
}

pub fn tank_library(cfg: &RunConfig) -> CandidateLibrary {
    CandidateLibrary::build(&TANK_VARS, cfg.sindy.library)
}

/// Trains `module`; returns the model and a JSON training summary.
pub fn fit(
    cfg: &RunConfig,
    module: Module,
    data: &Data,
) -> Result<(Trained, serde_json::Value), CliError> {
    Ok(match (module, data) {
        (Module::Bvae, Data::Concepts(set)) => {
            let (m, r) = bvae::train(set, &cfg.bvae)?;
            (Trained::Bvae(m), serde_json::to_value(r)?)
        }
        (Module::Agents, Data::Qa(set)) => {
            let (m, r) = agents::train(set, &cfg.agents)?;
            (Trained::Agents(m), serde_json::to_value(r)?)
        }
        (Module::Sindy, Data::Sindy(set)) => {
            let m = SindyModel::fit(tank_library(cfg), &set.x, &set.xdot, &cfg.sindy.stlsq)?;
            let summary = json!({ "fits": m.fits, "equations": m.render() });
            (Trained::Sindy(m), summary)
        }
        (Module::Aesindy, Data::Lifted(set)) => {
            let (m, r) = aesindy::train(set, &cfg.aesindy)?;
            let summary = json!({ "history": r.history, "equations": m.latent_model().render() });
            (Trained::Aesindy(m), summary)
        }
        (Module::Somvae, Data::States(set)) => {
            let (m, r) = somvae::train(set, &cfg.somvae)?;
            (Trained::Somvae(m), serde_json::to_value(r)?)
        }
        (m, d) => return Err(wrong_data(m, d)),
    })
}

pub fn evaluate(cfg: &RunConfig, model: &Trained, data: &Data) -> Result<Evaluation, CliError> {
    match (model, data) {
        (Trained::Bvae(m), Data::Concepts(set)) => evaluate_bvae(cfg, m, set),
        (Trained::Agents(m), Data::Qa(set)) => evaluate_agents(cfg, m, set),
        (Trained::Sindy(m), Data::Sindy(set)) => evaluate_sindy(cfg, m, set),
        (Trained::Aesindy(m), Data::Lifted(_)) => evaluate_aesindy(cfg, m),
        (Trained::Somvae(m), Data::States(set)) => evaluate_somvae(cfg, m, set),
        (m, d) => Err(wrong_data(module_of(m), d)),
    }
}

pub fn module_of(model: &Trained) -> Module {
    match model {
        Trained::Bvae(_) => Module::Bvae,
        Trained::Agents(_) => Module::Agents,
        Trained::Sindy(_) => Module::Sindy,
        Trained::Aesindy(_) => Module::Aesindy,
        Trained::Somvae(_) => Module::Somvae,
    }
}

fn correlation_metrics(
    metrics: &mut BTreeMap<String, f64>,
    report: &CorrelationReport,
    threshold: f64,
) {
    for (c, name) in CONCEPT_NAMES.iter().enumerate() {
        metrics.insert(format!("best_abs_r_{name}"), report.best_abs(c));
    }
    metrics.insert(
        "concepts_above_threshold".into(),
        report.concepts_above(threshold) as f64,
    );
    metrics.insert(
        "disentanglement".into(),
        eval::disentanglement_score(report),
    );
    metrics.insert(
        "distinct_assignment_0_8".into(),
        f64::from(u8::from(
            report.distinct_assignment_above(DISTINCT_THRESHOLD),
        )),
    );
}

fn scatter_plot(
    name: &str,
    prefix: &str,
    latents: &Tensor,
    extra: &[(&str, &Tensor)],
    concepts: &Tensor,
) -> PlotData {
    let mut header = vec!["series_id".to_string()];
    header.extend((1..=latents.cols()).map(|j| format!("{prefix}{j}")));
    for (label, t) in extra {
        header.extend((1..=t.cols()).map(|j| format!("{label}{j}")));
    }
    header.extend(CONCEPT_NAMES.iter().map(|s| s.to_string()));
    let rows = (0..latents.rows())
        .map(|r| {
            let mut row = vec![r.to_string()];
            row.extend(latents.row(r).iter().map(|&v| num(v)));
            for (_, t) in extra {
                row.extend(t.row(r).iter().map(|&v| num(v)));
            }
            row.extend(concepts.row(r).iter().map(|&v| num(v)));
            row
        })
        .collect();
    PlotData {
        name: name.into(),
        header,
        rows,
    }
}

pub fn evaluate_bvae(
    cfg: &RunConfig,
    model: &BvaeModel,
    set: &ConceptLabeledSet,
) -> Result<Evaluation, CliError> {
    let all: Vec<usize> = (0..set.len()).collect();
    let x = set.standardized_matrix(&all);
    let concepts = set.concept_matrix(&all);
    let (mu, lv) = model.encode(&x)?;
    let kl = bvae::kl_per_dim(&mu, &lv);
    let mut report = eval::correlation_matrix(&mu, &concepts)?;
    report.kl_per_dim = Some(kl.clone());

    let mut metrics = BTreeMap::new();
    let val = set.standardized_matrix(&set.split.val);
    if val.rows() > 0 {
        let (vmu, _) = model.encode(&val)?;
        let recon = model.decode(&vmu)?;
        let mse = val.zip_map(&recon, |a, b| (a - b) * (a - b)).sum() / val.len() as f64;
        metrics.insert("val_recon_mse".into(), mse);
    }
    for (j, v) in kl.iter().enumerate() {
        metrics.insert(format!("kl_dim_{}", j + 1), *v);
    }
    metrics.insert(
        "min_kl".into(),
        kl.iter().copied().fold(f64::INFINITY, f64::min),
    );
    metrics.insert(
        "inactive_latents".into(),
        bvae::inactive_dims(&kl).len() as f64,
    );
    correlation_metrics(&mut metrics, &report, cfg.eval.correlation_threshold);
    Ok(Evaluation {
        metrics,
        details: json!({ "correlation": report }),
        plots: vec![scatter_plot("latents", "mu", &mu, &[], &concepts)],
    })
}

pub fn evaluate_agents(
    cfg: &RunConfig,
    model: &AgentsModel,
    set: &QASet,
) -> Result<Evaluation, CliError> {
    let base = &set.base;
    let all: Vec<usize> = (0..base.len()).collect();
    let x = base.standardized_matrix(&all);
    let concepts = base.concept_matrix(&all);
    let z = model.latent_responses(&x)?;
    let report = eval::correlation_matrix(&z, &concepts)?;
    let answers = model.answer(&x)?;

    let mut metrics = BTreeMap::new();
    let val = base.standardized_matrix(&base.split.val);
    if val.rows() > 0 {
        let truth = model
            .answer_scaler
            .transform(&set.answer_matrix(&base.split.val));
        let pred = model.answer_standardized(&val, None)?;
        for k in 0..agents::QUESTIONS {
            let mse = (0..val.rows())
                .map(|r| (pred.get(r, k) - truth.get(r, k)).powi(2))
                .sum::<f64>()
                / val.rows() as f64;
            metrics.insert(format!("val_nmse_a{}", k + 1), mse);
        }
    }
    let log_sigma = model.store.get(model.log_sigma);
    metrics.insert(
        "communication_cost".into(),
        agents::communication_cost(log_sigma),
    );
    correlation_metrics(&mut metrics, &report, cfg.eval.correlation_threshold);
    let ls_rows: Vec<Vec<f64>> = (0..log_sigma.rows())
        .map(|r| log_sigma.row(r).to_vec())
        .collect();
    Ok(Evaluation {
        metrics,
        details: json!({ "correlation": report, "log_sigma": ls_rows }),
        plots: vec![scatter_plot(
            "latents",
            "z",
            &z,
            &[("a", &answers)],
            &concepts,
        )],
    })
}

fn trajectory_plot(name: &str, truth: &Tensor, pred: &Tensor, dt: f64) -> PlotData {
    let mut header = vec!["t".to_string()];
    header.extend((1..=3).map(|j| format!("true_h{j}")));
    header.extend((1..=3).map(|j| format!("pred_h{j}")));
    let rows = (0..truth.rows())
        .map(|r| {
            let mut row = vec![num(r as f64 * dt)];
            row.extend(truth.row(r).iter().map(|&v| num(v)));
            row.extend(pred.row(r).iter().map(|&v| num(v)));
            row
        })
        .collect();
    PlotData {
        name: name.into(),
        header,
        rows,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn evaluate_sindy(
    cfg: &RunConfig,
    model: &SindyModel,
    set: &SindySet,
) -> Result<Evaluation, CliError> {
    let scfg = &cfg.data.sindy;
    let params = scfg.params();
    let structure = sindy::compare_structure(model, &sindy::drainage_structure(&params));
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "support_exact".into(),
        f64::from(u8::from(structure.support_exact)),
    );
    metrics.insert("max_coef_rel_error".into(), structure.max_coef_rel_error);
    metrics.insert("active_terms".into(), model.active_terms().len() as f64);
    let max_res = model
        .fits
        .iter()
        .map(|f| f.relative_residual)
        .fold(0.0, f64::max);
    metrics.insert("max_relative_residual".into(), max_res);

    let mut errors = Vec::new();
    let mut plot = None;
    for x0 in aesindy::held_out_states(&scfg.ic_box, cfg.eval.held_out, cfg.seed) {
        let truth = sim::simulate(x0, &params, scfg.dt, cfg.eval.horizon)?;
        let truth = Tensor::from_rows(&truth.to_rows())?;
        let err = match sindy::simulate_identified(model, &x0.to_array(), scfg.dt, cfg.eval.horizon)
        {
            Ok(pred) => {
                let e = sindy::relative_trajectory_mse(&pred, &truth)?;
                plot.get_or_insert_with(|| trajectory_plot("heldout", &truth, &pred, scfg.dt));
                e
            }
            Err(_) => f64::MAX,
        };
        errors.push(err);
    }
    metrics.insert("heldout_rel_mse_median".into(), median(&errors));
    metrics.insert(
        "heldout_rel_mse_max".into(),
        errors.iter().copied().fold(0.0, f64::max),
    );

    // Negative control: the same data without signed square roots.
    let plain = CandidateLibrary::build(&TANK_VARS, cfg.sindy.library.without_sqrt());
    let control = SindyModel::fit(plain, &set.x, &set.xdot, &cfg.sindy.stlsq)?;
    let accepted = sindy::sparse_fit_accepted(
        &control,
        sindy::SPARSE_FIT_RESIDUAL,
        sindy::SPARSE_FIT_MAX_TERMS,
    );
    metrics.insert(
        "control_sparse_fit_accepted".into(),
        f64::from(u8::from(accepted)),
    );
    metrics.insert(
        "control_max_relative_residual".into(),
        control
            .fits
            .iter()
            .map(|f| f.relative_residual)
            .fold(0.0, f64::max),
    );
    metrics.insert(
        "control_max_active".into(),
        control.fits.iter().map(|f| f.active).max().unwrap_or(0) as f64,
    );
    Ok(Evaluation {
        metrics,
        details: json!({
            "equations": model.render(),
            "structure": {
                "support_exact": structure.support_exact,
                "max_coef_rel_error": structure.max_coef_rel_error,
                "missing": structure.missing,
                "spurious": structure.spurious,
            },
            "heldout_rel_mse": errors,
            "control_equations": control.render(),
        }),
        plots: plot.into_iter().collect(),
    })
}

pub fn evaluate_aesindy(cfg: &RunConfig, model: &AesindyModel) -> Result<Evaluation, CliError> {
    let scfg = &cfg.data.sindy;
    let scale = cfg.data.lift_scale;
    let mut errors = Vec::new();
    let mut plot = None;
    for x0 in aesindy::held_out_states(&scfg.ic_box, cfg.eval.held_out, cfg.seed) {
        let truth =
            aesindy::lifted_trajectory(x0, &scfg.params(), scfg.dt, cfg.eval.horizon, scale)?;
        let err = match aesindy::roundtrip_eval(model, &truth, scfg.dt) {
            Ok(rt) => {
                // Columns 1..=3 of the lift are the scaled levels.
                let levels = |t: &Tensor| {
                    let rows: Vec<[f64; 3]> = (0..t.rows())
                        .map(|r| {
                            [
                                t.get(r, 1) * scale,
                                t.get(r, 2) * scale,
                                t.get(r, 3) * scale,
                            ]
                        })
                        .collect();
                    Tensor::from_rows(&rows)
                };
                if plot.is_none() {
                    plot = Some(trajectory_plot(
                        "roundtrip",
                        &levels(&truth)?,
                        &levels(&rt.predicted)?,
                        scfg.dt,
                    ));
                }
                rt.relative_mse
            }
            Err(_) => f64::MAX,
        };
        errors.push(err);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("roundtrip_rel_mse_median".into(), median(&errors));
    metrics.insert(
        "roundtrip_rel_mse_max".into(),
        errors.iter().copied().fold(0.0, f64::max),
    );
    metrics.insert("active_terms".into(), model.active_count() as f64);
    metrics.insert("dynamic_latents".into(), model.dynamic_latents() as f64);
    Ok(Evaluation {
        metrics,
        details: json!({
            "equations": model.latent_model().render(),
            "roundtrip_rel_mse": errors,
        }),
        plots: plot.into_iter().collect(),
    })
}

pub fn evaluate_somvae(
    cfg: &RunConfig,
    model: &SomVaeModel,
    set: &StateSet,
) -> Result<Evaluation, CliError> {
    let w = set.config.window_len;
    let tl = somvae::predict_states(model, &set.test_stream, &set.scaler, w)?;
    let truth = tl.truth_indices();
    let (lag, agreement) = eval::estimate_lag(&tl.predicted, &truth, cfg.eval.max_lag)?;
    let period = set.config.cycle_len();
    let per = eval::periodicity(&tl.predicted, period, cfg.eval.period_tolerance);
    let nmi = eval::nmi(&tl.predicted, &truth)?;
    let frequent = eval::frequent_states(&tl.predicted, cfg.eval.min_state_share);
    let mut usage = vec![0usize; model.grid().len()];
    for &s in &tl.predicted {
        usage[s] += 1;
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("lag_steps".into(), lag as f64);
    metrics.insert("lag_agreement".into(), agreement);
    metrics.insert("frequent_states".into(), frequent.len() as f64);
    metrics.insert("switches".into(), eval::switch_count(&tl.predicted) as f64);
    metrics.insert("cycle_length".into(), period as f64);
    metrics.insert("acf_peak_lag".into(), per.peak_lag as f64);
    metrics.insert("acf_peak".into(), per.peak_value);
    metrics.insert("acf_prominence".into(), per.prominence);
    metrics.insert("nmi".into(), nmi);
    metrics.insert(
        "unused_states".into(),
        usage.iter().filter(|&&u| u == 0).count() as f64,
    );
    let rows = tl
        .predicted
        .iter()
        .zip(&tl.truth)
        .enumerate()
        .map(|(i, (p, t))| {
            vec![
                (tl.start + i).to_string(),
                p.to_string(),
                t.name().to_string(),
            ]
        })
        .collect();
    Ok(Evaluation {
        metrics,
        details: json!({
            "state_usage": usage,
            "frequent_states": frequent,
            "majority_phase": eval::majority_map(&tl.predicted, &truth),
        }),
        plots: vec![PlotData {
            name: "timeline".into(),
            header: vec!["t".into(), "predicted_state".into(), "true_phase".into()],
            rows,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn plot_csv_has_header_and_rows() {
        let p = PlotData {
            name: "x".into(),
            header: vec!["t".into(), "v".into()],
            rows: vec![vec!["0".into(), "1.5".into()]],
        };
        assert_eq!(
            String::from_utf8(p.to_csv().unwrap()).unwrap(),
            "t,v\n0,1.5\n"
        );
    }

    #[test]
    fn mismatched_module_and_data_is_a_config_error() {
        let cfg = RunConfig::default();
        let mut small = cfg.clone();
        small.data.sindy.num_ic = 2;
        let data = generate(&small, Dataset::Sindy).unwrap();
        let err = fit(&cfg, Module::Bvae, &data).err().unwrap();
        assert_eq!(err.kind, crate::error::ErrorKind::Config);
    }
}
