//! Three-tank process model and fixed-step integration.
//!
//! Tanks 1 and 3 receive pump inflows `q1` and `q3`; valve `v12` couples
//! tanks 1 and 2, valve `v23` couples tanks 2 and 3 and valve `v3` drains
//! tank 3. Flow through a coupling valve follows Torricelli's law on the
//! level difference, `kv * sign(dh) * sqrt(|dh|) / C`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;

/// Physical parameters of the three-tank process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    pub q1: f64,
    pub q3: f64,
    pub kv12: f64,
    pub kv23: f64,
    pub kv3: f64,
    /// Tank cross-section.
    pub c: f64,
}

impl Default for TankParams {
    /// The example setting `q1 = 1, q3 = 2, kv12 = 1, kv23 = 0.5` with
    /// `kv3 = 0.2` and `C = 1`.
    fn default() -> Self {
        Self {
            q1: 1.0,
            q3: 2.0,
            kv12: 1.0,
            kv23: 0.5,
            kv3: DEFAULT_KV3,
            c: DEFAULT_C,
        }
    }
}

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_KV3: f64 = 0.2;
pub const DEFAULT_DT: f64 = 0.5;
/// Tank capacity used by the fill-time and drain-time answers.
pub const DEFAULT_H_MAX: f64 = 100.0;

impl TankParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("q1", self.q1),
            ("q3", self.q3),
            ("kv12", self.kv12),
            ("kv23", self.kv23),
            ("kv3", self.kv3),
            ("c", self.c),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Domain(format!("parameter {name} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::Domain(format!("parameter {name} = {v} is negative")));
            }
        }
        if self.c <= 0.0 {
            return Err(Error::Domain("cross-section C must be positive".into()));
        }
        Ok(())
    }

    /// All pumps off and all valves closed.
    pub fn closed(c: f64) -> Self {
        Self {
            q1: 0.0,
            q3: 0.0,
            kv12: 0.0,
            kv23: 0.0,
            kv3: 0.0,
            c,
        }
    }
}

/// Fill levels of the three tanks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl SystemState {
    pub const fn new(h1: f64, h2: f64, h3: f64) -> Self {
        Self { h1, h2, h3 }
    }

    pub fn from_array(h: [f64; 3]) -> Self {
        Self::new(h[0], h[1], h[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.h1, self.h2, self.h3]
    }

    pub fn total(self) -> f64 {
        self.h1 + self.h2 + self.h3
    }

    pub fn is_finite(self) -> bool {
        self.h1.is_finite() && self.h2.is_finite() && self.h3.is_finite()
    }

    /// Levels below zero are set to zero.
    pub fn clamped(self) -> Self {
        Self::new(self.h1.max(0.0), self.h2.max(0.0), self.h3.max(0.0))
    }
}

/// `sign(x) * sqrt(|x|)`, with `sign(0) = 0`.
pub fn signed_sqrt(x: f64) -> f64 {
    if x > 0.0 {
        x.sqrt()
    } else if x < 0.0 {
        -(-x).sqrt()
    } else {
        0.0
    }
}

/// Volumetric flow from tank 1 to tank 2, divided by `C`.
pub fn flow_12(state: SystemState, params: &TankParams) -> f64 {
    let s = state.clamped();
    params.kv12 / params.c * signed_sqrt(s.h1 - s.h2)
}

/// Volumetric flow from tank 2 to tank 3, divided by `C`.
pub fn flow_23(state: SystemState, params: &TankParams) -> f64 {
    let s = state.clamped();
    params.kv23 / params.c * signed_sqrt(s.h2 - s.h3)
}

/// Outflow through valve 3.
pub fn outflow_3(state: SystemState, params: &TankParams) -> f64 {
    params.kv3 * state.h3.max(0.0).sqrt()
}

/// Right-hand side of the three-tank level dynamics.
pub fn derivatives(state: SystemState, params: &TankParams) -> Result<[f64; 3]> {
    if !state.is_finite() {
        return Err(Error::Domain(format!("non-finite state {state:?}")));
    }
    params.validate()?;
    let f12 = flow_12(state, params);
    let f23 = flow_23(state, params);
    Ok([
        params.q1 / params.c - f12,
        f12 - f23,
        params.q3 / params.c + f23 - outflow_3(state, params),
    ])
}

/// One classical Runge-Kutta step of `y' = f(y)` for any state dimension.
pub fn rk4<F>(y: &[f64], dt: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { (0..n).map(|i| y[i] + a * k[i]).collect() };
    let k1 = f(y)?;
    let k2 = f(&axpy(0.5 * dt, &k1))?;
    let k3 = f(&axpy(0.5 * dt, &k2))?;
    let k4 = f(&axpy(dt, &k3))?;
    Ok((0..n)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn step_at(state: SystemState, params: &TankParams, dt: f64, t: f64) -> Result<SystemState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let next = rk4(&state.to_array(), dt, |y| {
        let s = SystemState::new(y[0], y[1], y[2]);
        if !s.is_finite() {
            return Err(Error::Integration {
                time: t,
                reason: format!("non-finite intermediate state {s:?}"),
            });
        }
        derivatives(s, params).map(|d| d.to_vec())
    })?;
    let next = SystemState::new(next[0], next[1], next[2]);
    if !next.is_finite() {
        return Err(Error::Integration {
            time: t + dt,
            reason: format!("non-finite state {next:?}"),
        });
    }
    Ok(next.clamped())
}

/// Advances the process by one RK4 step; levels are clamped at zero.
pub fn rk4_step(state: SystemState, params: &TankParams, dt: f64) -> Result<SystemState> {
    step_at(state, params, dt, 0.0)
}

/// A run of `steps` integration steps under constant parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub params: TankParams,
    pub steps: usize,
}

/// Simulated level time series on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<SystemState>,
    pub segments: Vec<Segment>,
    /// Segment that produced each state; the initial state belongs to segment 0.
    pub segment_index: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |i| i as f64 * self.dt)
    }

    /// Parameters in effect for the step that produced state `i`.
    pub fn params_at(&self, i: usize) -> &TankParams {
        &self.segments[self.segment_index[i]].params
    }

    pub fn to_rows(&self) -> Vec<[f64; 3]> {
        self.states.iter().map(|s| s.to_array()).collect()
    }

    /// Writes `t,h1,h2,h3[,segment]` rows at full precision.
    pub fn write_csv(&self, path: &Path, with_segment: bool) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = if with_segment {
            "t,h1,h2,h3,segment"
        } else {
            "t,h1,h2,h3"
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "{header}").map_err(io)?;
        for (i, (t, s)) in self.times().zip(&self.states).enumerate() {
            write!(
                w,
                "{},{},{},{}",
                fmt_f64(t),
                fmt_f64(s.h1),
                fmt_f64(s.h2),
                fmt_f64(s.h3)
            )
            .map_err(io)?;
            if with_segment {
                write!(w, ",{}", self.segment_index[i]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Integrates `steps` RK4 steps from `x0`; the result has `steps + 1` states.
pub fn simulate(x0: SystemState, params: &TankParams, dt: f64, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Domain("simulate requires at least one step".into()));
    }
    simulate_schedule(
        x0,
        &[Segment {
            params: *params,
            steps,
        }],
        dt,
    )
}

/// Integrates a piecewise-constant parameter schedule. The last state of one
/// segment is the first state of the next.
pub fn simulate_schedule(x0: SystemState, segments: &[Segment], dt: f64) -> Result<Trajectory> {
    if segments.is_empty() {
        return Err(Error::Domain("parameter schedule is empty".into()));
    }
    if !x0.is_finite() || x0.h1 < 0.0 || x0.h2 < 0.0 || x0.h3 < 0.0 {
        return Err(Error::Domain(format!("invalid initial state {x0:?}")));
    }
    let total: usize = segments.iter().map(|s| s.steps).sum();
    if total == 0 {
        return Err(Error::Domain("schedule contains no steps".into()));
    }
    for seg in segments {
        seg.params.validate()?;
    }
    let mut states = Vec::with_capacity(total + 1);
    let mut segment_index = Vec::with_capacity(total + 1);
    states.push(x0);
    segment_index.push(0);
    let mut state = x0;
    let mut k = 0usize;
    for (si, seg) in segments.iter().enumerate() {
        for _ in 0..seg.steps {
            state = step_at(state, &seg.params, dt, k as f64 * dt)?;
            states.push(state);
            segment_index.push(si);
            k += 1;
        }
    }
    Ok(Trajectory {
        dt,
        states,
        segments: segments.to_vec(),
        segment_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_mixing() -> TankParams {
        TankParams {
            q1: 0.0,
            q3: 0.0,
            kv12: 0.8,
            kv23: 0.6,
            kv3: 0.0,
            c: 1.0,
        }
    }

    #[test]
    fn empty_tanks_without_inflow_are_static() {
        let d = derivatives(
            SystemState::default(),
            &TankParams {
                q1: 0.0,
                q3: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn equal_levels_are_an_equilibrium() {
        let p = TankParams {
            kv3: 0.0,
            ..closed_mixing()
        };
        let d = derivatives(SystemState::new(5.0, 5.0, 5.0), &p).unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn example_state_matches_hand_evaluation() {
        // h = (30, 10, 90) with q1 = 1, q3 = 2, kv12 = 1, kv23 = 0.5, kv3 = 0.2, C = 1:
        //   f12 = 1 * sqrt(20), f23 = 0.5 * (-sqrt(80)), out = 0.2 * sqrt(90)
        let f12 = 20f64.sqrt();
        let f23 = -0.5 * 80f64.sqrt();
        let out = 0.2 * 90f64.sqrt();
        let expected = [1.0 - f12, f12 - f23, 2.0 + f23 - out];
        let d = derivatives(SystemState::new(30.0, 10.0, 90.0), &TankParams::default()).unwrap();
        for i in 0..3 {
            assert!((d[i] - expected[i]).abs() < 1e-12, "{d:?} vs {expected:?}");
        }
        assert!((expected[0] - (-3.472_135_955)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let err = derivatives(SystemState::new(f64::NAN, 0.0, 0.0), &TankParams::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn coupling_terms_are_antisymmetric() {
        let p = TankParams::default();
        for s in [
            SystemState::new(30.0, 10.0, 90.0),
            SystemState::new(1.0, 7.0, 3.0),
            SystemState::new(0.0, 0.5, 0.0),
        ] {
            let f12 = flow_12(s, &p);
            let f23 = flow_23(s, &p);
            let d = derivatives(s, &p).unwrap();
            // ḣ1 = q1 - f12, ḣ2 = f12 - f23, ḣ3 = q3 + f23 - out
            assert!((d[0] - p.q1 + f12).abs() < 1e-12);
            assert!((d[1] + f23 - f12).abs() < 1e-12);
            assert!((d[2] - p.q3 + outflow_3(s, &p) - f23).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_levels_are_clamped_before_evaluation() {
        let p = TankParams::default();
        let d = derivatives(SystemState::new(0.0, 0.0, -1.0), &p).unwrap();
        let d0 = derivatives(SystemState::new(0.0, 0.0, 0.0), &p).unwrap();
        assert_eq!(d, d0);
    }

    #[test]
    fn rk4_is_exact_for_constant_derivative() {
        let y = rk4(&[1.0, -2.0], 0.3, |_| Ok(vec![2.0, 0.5])).unwrap();
        assert_eq!(y, vec![1.0 + 0.6, -2.0 + 0.15]);
    }

    #[test]
    fn rk4_tracks_exponential_decay() {
        let y = rk4(&[1.0, 3.0], 0.1, |y| Ok(y.iter().map(|v| -v).collect())).unwrap();
        let e = (-0.1f64).exp();
        assert!(((y[0] - e) / e).abs() < 1e-7);
        assert!(((y[1] - 3.0 * e) / (3.0 * e)).abs() < 1e-7);
    }

    #[test]
    fn rk4_step_error_is_fifth_order() {
        // Local error of one step scales as dt^5: halving dt shrinks the
        // one-step vs two-half-step discrepancy by about 32.
        let p = TankParams::default();
        let x = SystemState::new(30.0, 10.0, 90.0);
        let discrepancy = |dt: f64| {
            let one = rk4_step(x, &p, dt).unwrap();
            let half = rk4_step(rk4_step(x, &p, dt / 2.0).unwrap(), &p, dt / 2.0).unwrap();
            let d = [one.h1 - half.h1, one.h2 - half.h2, one.h3 - half.h3];
            d.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let e1 = discrepancy(0.4);
        let e2 = discrepancy(0.2);
        let ratio = e1 / e2;
        assert!(ratio > 20.0 && ratio < 45.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_step_rejects_bad_dt() {
        assert!(rk4_step(SystemState::default(), &TankParams::default(), 0.0).is_err());
    }

    #[test]
    fn simulate_requires_steps() {
        let p = TankParams::default();
        let x0 = SystemState::new(30.0, 10.0, 90.0);
        assert!(simulate(x0, &p, 0.5, 0).is_err());
        let t = simulate(x0, &p, 0.5, 1).unwrap();
        assert_eq!(t.states, vec![x0, rk4_step(x0, &p, 0.5).unwrap()]);
    }

    #[test]
    fn closed_system_conserves_volume() {
        let p = closed_mixing();
        let x0 = SystemState::new(60.0, 5.0, 20.0);
        let t = simulate(x0, &p, 0.1, 1000).unwrap();
        let v0 = x0.total();
        for s in &t.states {
            assert!((s.total() - v0).abs() <= 1e-6 * v0);
        }
    }

    #[test]
    fn example_run_has_expected_shape() {
        let t = simulate(
            SystemState::new(30.0, 10.0, 90.0),
            &TankParams::default(),
            DEFAULT_DT,
            50,
        )
        .unwrap();
        let first = t.states[0];
        let last = *t.states.last().unwrap();
        assert!(last.h3 < first.h3);
        assert!((last.h1 - last.h2).abs() < (first.h1 - first.h2).abs());
        assert!(t
            .states
            .iter()
            .all(|s| s.h1 >= 0.0 && s.h2 >= 0.0 && s.h3 >= 0.0));
    }

    #[test]
    fn schedule_segments_compose() {
        let p = TankParams::default();
        let x0 = SystemState::new(30.0, 10.0, 90.0);
        let one = simulate_schedule(
            x0,
            &[Segment {
                params: p,
                steps: 40,
            }],
            0.5,
        )
        .unwrap();
        let two = simulate_schedule(
            x0,
            &[
                Segment {
                    params: p,
                    steps: 15,
                },
                Segment {
                    params: p,
                    steps: 25,
                },
            ],
            0.5,
        )
        .unwrap();
        assert_eq!(one.states, two.states);
        assert_eq!(two.segment_index[15], 0);
        assert_eq!(two.segment_index[16], 1);
        assert_eq!(one.states, simulate(x0, &p, 0.5, 40).unwrap().states);
    }

    #[test]
    fn fill_segment_raises_levels_monotonically() {
        let fill = TankParams {
            q1: 0.3,
            q3: 0.3,
            ..TankParams::closed(1.0)
        };
        let t = simulate_schedule(
            SystemState::new(1.0, 2.0, 3.0),
            &[Segment {
                params: fill,
                steps: 100,
            }],
            0.5,
        )
        .unwrap();
        for w in t.states.windows(2) {
            assert!(w[1].h1 > w[0].h1 && w[1].h3 > w[0].h3);
            assert_eq!(w[1].h2, w[0].h2);
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let t = simulate(
            SystemState::new(30.0, 10.0, 90.0),
            &TankParams::default(),
            0.5,
            4,
        )
        .unwrap();
        t.write_csv(&path, true).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,h1,h2,h3,segment");
        assert_eq!(lines.len(), 6);
        let h1: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(h1, t.states[2].h1);
    }
}
