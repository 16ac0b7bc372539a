//! Full-batch gradient descent with every checkpoint retained.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::instrument::Counters;
use crate::model::{ParamVector, SmoothObjective};

/// Any coordinate beyond this magnitude is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_rate: f64,
    pub steps: usize,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn new(base_rate: f64, steps: usize, decay: Decay) -> Result<Self> {
        if !(base_rate.is_finite() && base_rate > 0.0) {
            return Err(Error::config(format!(
                "base rate {base_rate} must be positive"
            )));
        }
        Ok(Self {
            base_rate,
            steps,
            decay,
        })
    }

    pub fn linear(base_rate: f64, steps: usize) -> Result<Self> {
        Self::new(base_rate, steps, Decay::Linear)
    }

    pub fn constant(base_rate: f64, steps: usize) -> Result<Self> {
        Self::new(base_rate, steps, Decay::Constant)
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let decay = match self.decay {
            Decay::Linear => "linear",
            Decay::Constant => "constant",
        };
        write!(f, "{decay}:{}:{}", self.base_rate, self.steps)
    }
}

/// `η_t` for `t ∈ [0, T)`. Linear decay is `base·(1 − t/T)`, so the last applied
/// rate is `base/T`, never zero.
pub fn rate_at(schedule: &LrSchedule, t: usize) -> Result<f64> {
    if t >= schedule.steps {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: schedule.steps,
        });
    }
    Ok(match schedule.decay {
        Decay::Constant => schedule.base_rate,
        Decay::Linear => schedule.base_rate * (1.0 - t as f64 / schedule.steps as f64),
    })
}

/// Checkpoints `θ_0..θ_T` and the `T` rates that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    checkpoints: Vec<ParamVector>,
    rates: Vec<f64>,
    objective_tag: String,
    schedule: String,
    seed: u64,
}

impl Trajectory {
    pub fn new(
        checkpoints: Vec<ParamVector>,
        rates: Vec<f64>,
        objective_tag: impl Into<String>,
        schedule: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::config("trajectory needs at least θ_0"));
        }
        if rates.len() + 1 != checkpoints.len() {
            return Err(Error::config(format!(
                "{} checkpoints need {} rates, got {}",
                checkpoints.len(),
                checkpoints.len() - 1,
                rates.len()
            )));
        }
        let d = checkpoints[0].len();
        if checkpoints.iter().any(|c| c.len() != d) {
            return Err(Error::config("checkpoints differ in dimension"));
        }
        Ok(Self {
            checkpoints,
            rates,
            objective_tag: objective_tag.into(),
            schedule: schedule.into(),
            seed,
        })
    }

    pub fn checkpoints(&self) -> &[ParamVector] {
        &self.checkpoints
    }

    pub fn checkpoint(&self, t: usize) -> &ParamVector {
        &self.checkpoints[t]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Number of update steps `T`.
    pub fn steps(&self) -> usize {
        self.rates.len()
    }

    pub fn dim(&self) -> usize {
        self.checkpoints[0].len()
    }

    pub fn first(&self) -> &ParamVector {
        &self.checkpoints[0]
    }

    pub fn last(&self) -> &ParamVector {
        self.checkpoints.last().expect("nonempty by construction")
    }

    pub fn objective_tag(&self) -> &str {
        &self.objective_tag
    }

    pub fn schedule(&self) -> &str {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// First `steps + 1` checkpoints as a trajectory of their own.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps > self.steps() {
            return Err(Error::IndexOutOfRange {
                index: steps,
                len: self.steps() + 1,
            });
        }
        Self::new(
            self.checkpoints[..=steps].to_vec(),
            self.rates[..steps].to_vec(),
            self.objective_tag.clone(),
            format!("{}[..={steps}]", self.schedule),
            self.seed,
        )
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.checkpoints {
            for v in c.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for r in &self.rates {
            h.update(r.to_le_bytes());
        }
        h.update(self.objective_tag.as_bytes());
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    const MAGIC: &'static [u8; 8] = b"TACSTRJ1";

    /// Binary layout: magic, `d`, `T`, seed (u64 LE), length-prefixed schedule
    /// description and objective tag, `(T+1)·d` checkpoint values, `T` rates.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.steps() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for s in [&self.schedule, &self.objective_tag] {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for c in &self.checkpoints {
            for v in c.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for r in &self.rates {
            w.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::format("trajectory", e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != Self::MAGIC {
            return Err(Error::format("trajectory", "bad magic"));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(bad)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let d = read_u64(&mut r)? as usize;
        let steps = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let read_str = |r: &mut R| -> Result<String> {
            let mut len = [0u8; 4];
            r.read_exact(&mut len).map_err(bad)?;
            let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut buf).map_err(bad)?;
            String::from_utf8(buf).map_err(|e| Error::format("trajectory", e.to_string()))
        };
        let schedule = read_str(&mut r)?;
        let tag = read_str(&mut r)?;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf).map_err(bad)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut checkpoints = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            let mut v = Vec::with_capacity(d);
            for _ in 0..d {
                v.push(read_f64(&mut r)?);
            }
            checkpoints.push(ParamVector::from_vec(v));
        }
        let mut rates = Vec::with_capacity(steps);
        for _ in 0..steps {
            rates.push(read_f64(&mut r)?);
        }
        Self::new(checkpoints, rates, tag, schedule, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

/// Runs `θ_{t+1} = θ_t − η_t ∇L(θ_t)` for `schedule.steps` steps from `theta0`.
pub fn train_gd<O: SmoothObjective + ?Sized>(
    theta0: &ParamVector,
    objective: &O,
    schedule: &LrSchedule,
) -> Result<Trajectory> {
    train_gd_with(theta0, objective, schedule, 0, None)
}

/// [`train_gd`] with a provenance seed and optional step accounting.
pub fn train_gd_with<O: SmoothObjective + ?Sized>(
    theta0: &ParamVector,
    objective: &O,
    schedule: &LrSchedule,
    seed: u64,
    counters: Option<&Counters>,
) -> Result<Trajectory> {
    if theta0.len() != objective.dim() {
        return Err(Error::config(format!(
            "theta0 has dimension {} but the objective expects {}",
            theta0.len(),
            objective.dim()
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidNumeric("theta0 is not finite".into()));
    }
    if let Some(c) = counters {
        c.add_training_run();
    }
    let mut checkpoints = Vec::with_capacity(schedule.steps + 1);
    let mut rates = Vec::with_capacity(schedule.steps);
    checkpoints.push(theta0.clone());
    let mut theta = theta0.clone();
    for t in 0..schedule.steps {
        let eta = rate_at(schedule, t)?;
        let g = objective.gradient(&theta).map_err(|e| match e {
            Error::InvalidNumeric(reason) => Error::Divergence { step: t, reason },
            other => other,
        })?;
        theta.axpy(-eta, &g, 1.0);
        if let Some(bad) = theta
            .iter()
            .find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::Divergence {
                step: t + 1,
                reason: format!("parameter reached {bad}"),
            });
        }
        if let Some(c) = counters {
            c.add_gd_steps(1);
        }
        rates.push(eta);
        checkpoints.push(theta.clone());
    }
    Trajectory::new(
        checkpoints,
        rates,
        objective.tag(),
        schedule.to_string(),
        seed,
    )
}

/// `θ_T − θ_0`.
pub fn displacement(traj: &Trajectory) -> ParamVector {
    traj.last() - traj.first()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledDataset, LabeledExample, Provenance, Source};
    use crate::model::{grad_risk, RegularizedObjective};

    fn data() -> LabeledDataset {
        LabeledDataset::from_examples(
            2,
            vec![
                LabeledExample::new(vec![1.0, 0.5], 1, Source::Target),
                LabeledExample::new(vec![-0.3, 2.0], -1, Source::Target),
                LabeledExample::new(vec![0.8, -1.1], 1, Source::Target),
            ],
            Provenance::new("unit", 5, "-"),
        )
        .unwrap()
    }

    #[test]
    fn linear_rates() {
        let s = LrSchedule::linear(0.5, 10).unwrap();
        assert_eq!(rate_at(&s, 0).unwrap(), 0.5);
        assert_eq!(rate_at(&s, 5).unwrap(), 0.25);
        assert!((rate_at(&s, 9).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(
            rate_at(&s, 10),
            Err(Error::IndexOutOfRange { .. })
        ));
        let c = LrSchedule::constant(0.3, 4).unwrap();
        assert_eq!(rate_at(&c, 3).unwrap(), 0.3);
        assert!(LrSchedule::linear(0.0, 3).is_err());
    }

    #[test]
    fn linear_rate_sum_matches_arithmetic_series() {
        for steps in [1usize, 7, 20, 160] {
            let s = LrSchedule::linear(0.7, steps).unwrap();
            let total: f64 = (0..steps).map(|t| rate_at(&s, t).unwrap()).sum();
            // Σ_{t<T} b(1 − t/T) = b(T+1)/2
            let oracle = 0.7 * (steps as f64 + 1.0) / 2.0;
            assert!(
                (total - oracle).abs() < 1e-12 * oracle,
                "{total} vs {oracle}"
            );
        }
    }

    #[test]
    fn zero_steps_records_only_theta0() {
        let ds = data();
        let obj = RegularizedObjective::new(&ds).unwrap();
        let th0 = ParamVector::from_vec(vec![0.1, 0.2]);
        let traj = train_gd(&th0, &obj, &LrSchedule::linear(0.5, 0).unwrap()).unwrap();
        assert_eq!(traj.checkpoints(), &[th0]);
        assert!(traj.rates().is_empty());
        assert_eq!(displacement(&traj), ParamVector::zeros(2));
    }

    #[test]
    fn one_step_is_the_update_rule() {
        let ds = data();
        let obj = RegularizedObjective::new(&ds).unwrap();
        let th0 = ParamVector::from_vec(vec![0.1, -0.2]);
        let traj = train_gd(&th0, &obj, &LrSchedule::constant(0.4, 1).unwrap()).unwrap();
        let expected = &th0 - grad_risk(&th0, &obj).unwrap() * 0.4;
        assert_eq!(traj.checkpoint(1), &expected);
    }

    #[test]
    fn straight_line_displacement() {
        let v = ParamVector::from_vec(vec![0.5, -1.0, 2.0]);
        let th0 = ParamVector::from_vec(vec![1.0, 1.0, 1.0]);
        let cps = (0..=6).map(|t| &th0 + &v * t as f64).collect();
        let traj = Trajectory::new(cps, vec![1.0; 6], "line", "synthetic", 0).unwrap();
        assert_eq!(displacement(&traj), &v * 6.0);
    }

    #[test]
    fn divergence_names_the_step() {
        let ds = data();
        let obj = RegularizedObjective::new(&ds)
            .unwrap()
            .with_l2(1.0)
            .unwrap();
        // ridge with rate 1e7 blows up geometrically
        let r = train_gd(
            &ParamVector::from_vec(vec![1.0, 1.0]),
            &obj,
            &LrSchedule::constant(1e7, 50).unwrap(),
        );
        match r {
            Err(Error::Divergence { step, .. }) => assert!((1..=50).contains(&step)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_trajectory_shapes() {
        let c = vec![ParamVector::zeros(2), ParamVector::zeros(2)];
        assert!(Trajectory::new(c.clone(), vec![], "x", "s", 0).is_err());
        assert!(Trajectory::new(vec![], vec![], "x", "s", 0).is_err());
        let mixed = vec![ParamVector::zeros(2), ParamVector::zeros(3)];
        assert!(Trajectory::new(mixed, vec![1.0], "x", "s", 0).is_err());
    }

    #[test]
    fn binary_format_round_trips_bits() {
        let ds = data();
        let obj = RegularizedObjective::new(&ds).unwrap();
        let traj = train_gd_with(
            &ParamVector::zeros(2),
            &obj,
            &LrSchedule::linear(0.7, 9).unwrap(),
            1234,
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"TACSTRJ1");
        let back = Trajectory::read_from(&buf[..]).unwrap();
        assert_eq!(back, traj);
        assert_eq!(back.digest(), traj.digest());
        assert_eq!(back.schedule(), "linear:0.7:9");
        assert!(Trajectory::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn counters_track_steps_and_runs() {
        let ds = data();
        let obj = RegularizedObjective::new(&ds).unwrap();
        let c = Counters::new();
        let s = LrSchedule::linear(0.5, 12).unwrap();
        train_gd_with(&ParamVector::zeros(2), &obj, &s, 0, Some(&c)).unwrap();
        train_gd_with(&ParamVector::zeros(2), &obj, &s, 0, Some(&c)).unwrap();
        assert_eq!(c.gd_steps(), 24);
        assert_eq!(c.training_runs(), 2);
    }
}
