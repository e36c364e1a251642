//! CSV persistence with JSON manifests.
//!
//! Each dataset is written as `<name>.csv` next to `<name>.csv.manifest.json`.
//! The CSV carries every numeric field at full precision; the manifest holds
//! the generating config, seed, scaler and any index lists.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;
use crate::fmt_f64;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// Envelope stored next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: String,
    pub seed: u64,
    pub rows: usize,
    pub config: serde_json::Value,
    #[serde(default)]
    pub scaler: Option<Scaler>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_manifest(csv: &Path, kind: &str) -> Result<DatasetManifest> {
    let path = manifest_path(csv);
    let m: DatasetManifest = read_json(&path)?;
    if m.kind != kind {
        return Err(Error::Schema {
            path,
            row: 0,
            column: "kind".into(),
            reason: format!("expected `{kind}`, found `{}`", m.kind),
        });
    }
    Ok(m)
}

fn from_value<T: DeserializeOwned>(v: &serde_json::Value) -> Result<T> {
    Ok(serde_json::from_value(v.clone())?)
}

struct Writer {
    inner: csv::Writer<std::fs::File>,
}

impl Writer {
    fn create(path: &Path, header: &[String]) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.inner.write_record(fields)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Parsed CSV body with header already validated.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path, expected: &[String]) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
        let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        for (i, want) in expected.iter().enumerate() {
            match found.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::Schema {
                        path: path.into(),
                        row: 0,
                        column: want.clone(),
                        reason: format!("header column {i} is `{got}`"),
                    })
                }
                None => {
                    return Err(Error::Schema {
                        path: path.into(),
                        row: 0,
                        column: want.clone(),
                        reason: "missing from header".into(),
                    })
                }
            }
        }
        if let Some(extra) = found.get(expected.len()) {
            return Err(Error::Schema {
                path: path.into(),
                row: 0,
                column: extra.clone(),
                reason: "unexpected header column".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != expected.len() {
                return Err(Error::Schema {
                    path: path.into(),
                    row: i + 1,
                    column: expected.get(rec.len()).cloned().unwrap_or_default(),
                    reason: format!("expected {} fields, found {}", expected.len(), rec.len()),
                });
            }
            rows.push(rec);
        }
        Ok(Self {
            path: path.into(),
            header: expected.to_vec(),
            rows,
        })
    }

    fn err(&self, row: usize, col: usize, reason: String) -> Error {
        Error::Schema {
            path: self.path.clone(),
            row: row + 1,
            column: self.header[col].clone(),
            reason,
        }
    }

    fn f64(&self, row: usize, col: usize) -> Result<f64> {
        let s = &self.rows[row][col];
        s.trim()
            .parse::<f64>()
            .map_err(|e| self.err(row, col, format!("`{s}` is not a number: {e}")))
    }

    fn usize(&self, row: usize, col: usize) -> Result<usize> {
        let s = &self.rows[row][col];
        s.trim()
            .parse::<usize>()
            .map_err(|e| self.err(row, col, format!("`{s}` is not an index: {e}")))
    }

    fn expect_rows(&self, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(Error::Schema {
                path: self.path.clone(),
                row: self.rows.len(),
                column: String::new(),
                reason: format!("manifest promises {n} rows, file has {}", self.rows.len()),
            });
        }
        Ok(())
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

const CONCEPT_HEADER: [&str; 9] = [
    "series_id",
    "t",
    "h1",
    "h2",
    "h3",
    "q1",
    "q3",
    "kv12",
    "kv23",
];
const ANSWER_COLUMNS: [&str; 4] = ["a1", "a2", "a3", "a4"];

fn concept_header(with_answers: bool) -> Vec<String> {
    let mut h = names(&CONCEPT_HEADER);
    if with_answers {
        h.extend(names(&ANSWER_COLUMNS));
    }
    h
}

fn write_concept_rows(
    set: &ConceptLabeledSet,
    answers: Option<&[[f64; 4]]>,
    path: &Path,
) -> Result<()> {
    let mut w = Writer::create(path, &concept_header(answers.is_some()))?;
    for (i, (win, c)) in set.windows.iter().zip(&set.concepts).enumerate() {
        for k in 0..win.len() {
            let mut fields = vec![i.to_string(), fmt_f64(k as f64 * win.dt)];
            fields.extend(win.values.row(k).iter().map(|&v| fmt_f64(v)));
            fields.extend(c.iter().map(|&v| fmt_f64(v)));
            if let Some(a) = answers {
                fields.extend(a[i].iter().map(|&v| fmt_f64(v)));
            }
            w.row(&fields)?;
        }
    }
    w.finish()
}

/// Parses concept rows back into windows, checking series layout.
fn read_concept_rows(
    path: &Path,
    config: &ConceptSetConfig,
    with_answers: bool,
) -> Result<(Vec<Window>, Vec<[f64; 4]>, Vec<[f64; 4]>)> {
    let table = Table::read(path, &concept_header(with_answers))?;
    let s = config.seq_len;
    table.expect_rows(config.count * s)?;
    let mut windows = Vec::with_capacity(config.count);
    let mut concepts = Vec::with_capacity(config.count);
    let mut answers = Vec::new();
    for i in 0..config.count {
        let mut vals = Vec::with_capacity(s * 3);
        for k in 0..s {
            let r = i * s + k;
            let id = table.usize(r, 0)?;
            if id != i {
                return Err(table.err(r, 0, format!("expected series {i}, found {id}")));
            }
            for c in 2..5 {
                vals.push(table.f64(r, c)?);
            }
        }
        let r0 = i * s;
        concepts.push([
            table.f64(r0, 5)?,
            table.f64(r0, 6)?,
            table.f64(r0, 7)?,
            table.f64(r0, 8)?,
        ]);
        if with_answers {
            answers.push([
                table.f64(r0, 9)?,
                table.f64(r0, 10)?,
                table.f64(r0, 11)?,
                table.f64(r0, 12)?,
            ]);
        }
        windows.push(Window {
            values: Tensor::new(s, 3, vals)?,
            dt: config.dt,
        });
    }
    Ok((windows, concepts, answers))
}

fn concept_manifest(
    set: &ConceptLabeledSet,
    kind: &str,
    extra: serde_json::Value,
) -> Result<DatasetManifest> {
    Ok(DatasetManifest {
        kind: kind.into(),
        seed: set.seed,
        rows: set.len() * set.config.seq_len,
        config: serde_json::to_value(&set.config)?,
        scaler: Some(set.scaler.clone()),
        extra: serde_json::json!({ "split": set.split, "extra": extra }),
    })
}

impl ConceptLabeledSet {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_concept_rows(self, None, path)?;
        write_json(
            &manifest_path(path),
            &concept_manifest(self, "concept", serde_json::Value::Null)?,
        )
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let m = read_manifest(path, "concept")?;
        Self::from_parts(path, &m, false).map(|(set, _)| set)
    }

    fn from_parts(
        path: &Path,
        m: &DatasetManifest,
        with_answers: bool,
    ) -> Result<(Self, Vec<[f64; 4]>)> {
        let config: ConceptSetConfig = from_value(&m.config)?;
        config.validate()?;
        let (windows, concepts, answers) = read_concept_rows(path, &config, with_answers)?;
        let split: Split = from_value(&m.extra["split"])?;
        let scaler = m.scaler.clone().ok_or_else(|| Error::Schema {
            path: manifest_path(path),
            row: 0,
            column: "scaler".into(),
            reason: "missing".into(),
        })?;
        Ok((
            Self {
                config,
                seed: m.seed,
                windows,
                concepts,
                split,
                scaler,
            },
            answers,
        ))
    }
}

impl QASet {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_concept_rows(&self.base, Some(&self.answers), path)?;
        let extra = serde_json::to_value(&self.qa)?;
        write_json(
            &manifest_path(path),
            &concept_manifest(&self.base, "qa", extra)?,
        )
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let m = read_manifest(path, "qa")?;
        let qa: QaConfig = from_value(&m.extra["extra"])?;
        let (base, answers) = ConceptLabeledSet::from_parts(path, &m, true)?;
        Ok(Self { base, qa, answers })
    }
}

const SINDY_HEADER: [&str; 8] = ["ic_id", "t", "h1", "h2", "h3", "dh1", "dh2", "dh3"];

impl SindySet {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = Writer::create(path, &names(&SINDY_HEADER))?;
        for r in 0..self.len() {
            let k = r % self.config.steps;
            let mut fields = vec![
                self.ic_id[r].to_string(),
                fmt_f64(k as f64 * self.config.dt),
            ];
            fields.extend(
                self.x
                    .row(r)
                    .iter()
                    .chain(self.xdot.row(r))
                    .map(|&v| fmt_f64(v)),
            );
            w.row(&fields)?;
        }
        w.finish()?;
        let m = DatasetManifest {
            kind: "sindy".into(),
            seed: self.seed,
            rows: self.len(),
            config: serde_json::to_value(&self.config)?,
            scaler: None,
            extra: serde_json::Value::Null,
        };
        write_json(&manifest_path(path), &m)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let m = read_manifest(path, "sindy")?;
        let config: SindySetConfig = from_value(&m.config)?;
        let table = Table::read(path, &names(&SINDY_HEADER))?;
        table.expect_rows(m.rows)?;
        let n = table.rows.len();
        let mut x = Vec::with_capacity(n * 3);
        let mut xdot = Vec::with_capacity(n * 3);
        let mut ic_id = Vec::with_capacity(n);
        for r in 0..n {
            ic_id.push(table.usize(r, 0)?);
            for c in 2..5 {
                x.push(table.f64(r, c)?);
            }
            for c in 5..8 {
                xdot.push(table.f64(r, c)?);
            }
        }
        Ok(Self {
            config,
            seed: m.seed,
            x: Tensor::new(n, 3, x)?,
            xdot: Tensor::new(n, 3, xdot)?,
            ic_id,
        })
    }
}

fn lifted_header() -> Vec<String> {
    (0..LIFT_DIM)
        .map(|k| format!("x{k}"))
        .chain((0..LIFT_DIM).map(|k| format!("xdot{k}")))
        .chain(names(&["z1", "z2", "z3"]))
        .collect()
}

impl LiftedSet {
    /// The `z` columns hold the underlying levels in tank units.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = Writer::create(path, &lifted_header())?;
        for r in 0..self.len() {
            let fields: Vec<String> = self
                .x
                .row(r)
                .iter()
                .chain(self.xdot.row(r))
                .chain(self.z_true.row(r))
                .map(|&v| fmt_f64(v))
                .collect();
            w.row(&fields)?;
        }
        w.finish()?;
        let m = DatasetManifest {
            kind: "lifted".into(),
            seed: 0,
            rows: self.len(),
            config: serde_json::json!({ "scale": self.scale }),
            scaler: None,
            extra: serde_json::json!({ "ic_id": self.ic_id }),
        };
        write_json(&manifest_path(path), &m)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let m = read_manifest(path, "lifted")?;
        let scale: f64 = from_value(&m.config["scale"])?;
        let ic_id: Vec<usize> = from_value(&m.extra["ic_id"])?;
        let table = Table::read(path, &lifted_header())?;
        table.expect_rows(m.rows)?;
        let n = table.rows.len();
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for r in 0..n {
            for c in 0..2 * LIFT_DIM + 3 {
                let part = if c < LIFT_DIM {
                    0
                } else if c < 2 * LIFT_DIM {
                    1
                } else {
                    2
                };
                cols[part].push(table.f64(r, c)?);
            }
        }
        let [x, xdot, z] = cols;
        Ok(Self {
            x: Tensor::new(n, LIFT_DIM, x)?,
            xdot: Tensor::new(n, LIFT_DIM, xdot)?,
            z_true: Tensor::new(n, 3, z)?,
            scale,
            ic_id,
        })
    }
}

const STATE_HEADER: [&str; 6] = ["t", "h1", "h2", "h3", "segment", "phase"];

impl PhaseStream {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = Writer::create(path, &names(&STATE_HEADER))?;
        for k in 0..self.len() {
            let mut fields = vec![fmt_f64((k + 1) as f64 * self.dt)];
            fields.extend(self.levels.row(k).iter().map(|&v| fmt_f64(v)));
            fields.push(self.segment[k].to_string());
            fields.push(self.phases[k].name().to_string());
            w.row(&fields)?;
        }
        w.finish()
    }

    pub fn load_csv(path: &Path, dt: f64) -> Result<Self> {
        let table = Table::read(path, &names(&STATE_HEADER))?;
        let n = table.rows.len();
        let mut levels = Vec::with_capacity(n * 3);
        let mut segment = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        for r in 0..n {
            for c in 1..4 {
                levels.push(table.f64(r, c)?);
            }
            segment.push(table.usize(r, 4)?);
            let name = &table.rows[r][5];
            phases.push(
                Phase::from_name(name)
                    .ok_or_else(|| table.err(r, 5, format!("unknown phase `{name}`")))?,
            );
        }
        Ok(Self {
            dt,
            levels: Tensor::new(n, 3, levels)?,
            phases,
            segment,
        })
    }
}

/// Path of the held-out stream stored beside a state-set CSV.
pub fn test_stream_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".test.csv");
    PathBuf::from(s)
}

impl StateSet {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.stream.save_csv(path)?;
        self.test_stream.save_csv(&test_stream_path(path))?;
        let m = DatasetManifest {
            kind: "state".into(),
            seed: self.seed,
            rows: self.stream.len(),
            config: serde_json::to_value(&self.config)?,
            scaler: Some(self.scaler.clone()),
            extra: serde_json::json!({ "window_starts": self.window_starts, "test_rows": self.test_stream.len() }),
        };
        write_json(&manifest_path(path), &m)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let m = read_manifest(path, "state")?;
        let config: StateSetConfig = from_value(&m.config)?;
        let stream = PhaseStream::load_csv(path, config.dt)?;
        if stream.len() != m.rows {
            return Err(Error::Schema {
                path: path.into(),
                row: stream.len(),
                column: String::new(),
                reason: format!("manifest promises {} rows", m.rows),
            });
        }
        let test_stream = PhaseStream::load_csv(&test_stream_path(path), config.dt)?;
        let window_starts: Vec<usize> = from_value(&m.extra["window_starts"])?;
        if window_starts
            .iter()
            .any(|&s| s + config.window_len > stream.len())
        {
            return Err(Error::Config("window start beyond stream end".into()));
        }
        Ok(Self {
            config,
            seed: m.seed,
            stream,
            window_starts,
            test_stream,
            scaler: m.scaler.unwrap_or_else(|| Scaler::identity(3)),
        })
    }
}
