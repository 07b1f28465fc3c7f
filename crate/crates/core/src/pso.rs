//! Particle swarm minimization over box-bounded parameters, and the tuning
//! loop that searches the test-time crop scale and hard-weight threshold.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::multiview::{
    aggregate_batch, predict_views_batch, AggregationKind, AggregationMethod, MultiViewSet,
};
use crate::ndmath::TwoHeadMlp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// `(lo, hi)` per dimension; `lo == hi` pins a dimension.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            particles: 20,
            iterations: 30,
            inertia: 0.729,
            cognitive: 1.494_45,
            social: 1.494_45,
            bounds: Vec::new(),
            seed: 0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::config("swarm needs at least two particles"));
        }
        if self.bounds.is_empty() {
            return Err(Error::config("swarm needs at least one dimension"));
        }
        if self
            .bounds
            .iter()
            .any(|&(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::config("every bound needs finite lo <= hi"));
        }
        if !(self.inertia > 0.0 && self.cognitive > 0.0 && self.social > 0.0) {
            return Err(Error::config("swarm coefficients must be positive"));
        }
        Ok(())
    }
}

/// Positions, velocities and personal/global bests of a swarm.
#[derive(Clone, Debug)]
pub struct SwarmState {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub pbest_positions: Vec<Vec<f64>>,
    pub pbest_values: Vec<f64>,
    pub gbest_position: Vec<f64>,
    pub gbest_value: f64,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

impl SwarmState {
    /// Uniform positions inside the bounds, zero velocities, first evaluation done.
    pub fn init<F: FnMut(&[f64]) -> f64>(cfg: &SwarmConfig, objective: &mut F) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let positions: Vec<Vec<f64>> = (0..cfg.particles)
            .map(|_| {
                cfg.bounds
                    .iter()
                    .map(|&(lo, hi)| {
                        if lo < hi {
                            rng.random_range(lo..=hi)
                        } else {
                            lo
                        }
                    })
                    .collect()
            })
            .collect();
        let values: Vec<f64> = positions.iter().map(|p| sanitize(objective(p))).collect();
        let mut state = SwarmState {
            velocities: vec![vec![0.0; cfg.bounds.len()]; cfg.particles],
            pbest_positions: positions.clone(),
            pbest_values: values,
            gbest_position: positions[0].clone(),
            gbest_value: f64::INFINITY,
            positions,
            iteration: 0,
            rng,
        };
        state.reduce_gbest();
        Ok(state)
    }

    fn reduce_gbest(&mut self) {
        for (p, &v) in self.pbest_values.iter().enumerate() {
            if v < self.gbest_value {
                self.gbest_value = v;
                self.gbest_position = self.pbest_positions[p].clone();
            }
        }
    }

    /// One synchronous iteration: move every particle, evaluate in index order,
    /// then update personal and global bests.
    pub fn step<F: FnMut(&[f64]) -> f64>(&mut self, cfg: &SwarmConfig, objective: &mut F) {
        for p in 0..self.positions.len() {
            for (d, &(lo, hi)) in cfg.bounds.iter().enumerate() {
                let r1: f64 = self.rng.random();
                let r2: f64 = self.rng.random();
                let x = self.positions[p][d];
                let v = cfg.inertia * self.velocities[p][d]
                    + cfg.cognitive * r1 * (self.pbest_positions[p][d] - x)
                    + cfg.social * r2 * (self.gbest_position[d] - x);
                let mut nx = x + v;
                let mut nv = v;
                if nx < lo {
                    nx = lo;
                    nv = 0.0;
                } else if nx > hi {
                    nx = hi;
                    nv = 0.0;
                }
                self.positions[p][d] = nx;
                self.velocities[p][d] = nv;
            }
        }
        for p in 0..self.positions.len() {
            let v = sanitize(objective(&self.positions[p]));
            if v < self.pbest_values[p] {
                self.pbest_values[p] = v;
                self.pbest_positions[p] = self.positions[p].clone();
            }
        }
        self.reduce_gbest();
        self.iteration += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Global best value after initialization and after every iteration.
    pub history: Vec<f64>,
    /// Global best position matching each `history` entry.
    pub positions: Vec<Vec<f64>>,
}

/// Minimizes `objective` over the box `cfg.bounds`. Non-finite values count as `+inf`.
pub fn pso_minimize<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    cfg: &SwarmConfig,
) -> Result<SwarmResult> {
    let mut state = SwarmState::init(cfg, &mut objective)?;
    let mut history = vec![state.gbest_value];
    let mut positions = vec![state.gbest_position.clone()];
    for _ in 0..cfg.iterations {
        state.step(cfg, &mut objective);
        history.push(state.gbest_value);
        positions.push(state.gbest_position.clone());
    }
    Ok(SwarmResult {
        best_position: state.gbest_position,
        best_value: state.gbest_value,
        history,
        positions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Confidence,
    Certainty,
}

impl Weighting {
    pub fn hard_kind(self) -> AggregationKind {
        match self {
            Weighting::Confidence => AggregationKind::ConfidenceHard,
            Weighting::Certainty => AggregationKind::CertaintyHard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub gbest_value: f64,
    pub gbest_sc: f64,
    pub gbest_t: f64,
    pub winning_weighting: Weighting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub sc: f64,
    pub t: f64,
    pub best_accuracy: f64,
    pub winning_weighting: Weighting,
    pub history: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Hard-weight accuracies `(acc_co, acc_ce)` of precomputed views at threshold `t`.
pub fn hard_accuracies(
    views: &[MultiViewSet],
    labels: &[usize],
    num_classes: usize,
    t: f64,
) -> Result<(f64, f64)> {
    let acc = |kind| -> Result<f64> {
        let m = AggregationMethod::new(kind, Some(t))?;
        let preds: Vec<usize> = aggregate_batch(views, &m, num_classes)?
            .iter()
            .map(|a| a.class)
            .collect();
        accuracy(&preds, labels)
    };
    Ok((
        acc(AggregationKind::ConfidenceHard)?,
        acc(AggregationKind::CertaintyHard)?,
    ))
}

/// Evaluates the tuning criterion `1 - max(acc_co, acc_ce)` for `(sc, t)`.
///
/// Views are generated with the fixed augmentation seed, so the criterion is a
/// pure function of `(sc, t)`. The most recent view batch is memoized by `sc`.
pub struct TuneObjective<'a> {
    model: &'a TwoHeadMlp,
    val: &'a Dataset,
    labels: Vec<usize>,
    views: usize,
    seed: u64,
    cache: RefCell<Option<(u64, Vec<MultiViewSet>)>>,
}

impl<'a> TuneObjective<'a> {
    pub fn new(model: &'a TwoHeadMlp, val: &'a Dataset, views: usize, seed: u64) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::config("tuning needs a non-empty validation set"));
        }
        if views == 0 {
            return Err(Error::config("tuning needs at least one view"));
        }
        Ok(TuneObjective {
            model,
            val,
            labels: val.labels(),
            views,
            seed,
            cache: RefCell::new(None),
        })
    }

    /// Both hard-weight accuracies at `(sc, t)`.
    pub fn accuracies(&self, sc: f64, t: f64) -> Result<(f64, f64)> {
        let key = sc.to_bits();
        let mut cache = self.cache.borrow_mut();
        if cache.as_ref().is_none_or(|(k, _)| *k != key) {
            let views =
                predict_views_batch(self.model, &self.val.images, self.views, sc, self.seed)?;
            *cache = Some((key, views));
        }
        let views = &cache.as_ref().unwrap().1;
        hard_accuracies(views, &self.labels, self.val.num_classes, t)
    }

    pub fn criterion(&self, sc: f64, t: f64) -> Result<f64> {
        let (co, ce) = self.accuracies(sc, t)?;
        Ok(1.0 - co.max(ce))
    }
}

fn winner(co: f64, ce: f64) -> Weighting {
    if ce > co {
        Weighting::Certainty
    } else {
        Weighting::Confidence
    }
}

/// Searches crop scale and threshold maximizing validation accuracy of the
/// hard confidence/certainty aggregations. `cfg.bounds` is `[(sc_lo, sc_hi), (t_lo, t_hi)]`.
pub fn tune_inference(
    model: &TwoHeadMlp,
    val_set: &Dataset,
    n: usize,
    cfg: &SwarmConfig,
    fixed_seed: u64,
) -> Result<TuneResult> {
    if cfg.bounds.len() != 2 {
        return Err(Error::config(
            "tuning bounds must be [(sc_lo, sc_hi), (t_lo, t_hi)]",
        ));
    }
    let (sc_lo, sc_hi) = cfg.bounds[0];
    let (t_lo, t_hi) = cfg.bounds[1];
    if !(sc_lo > 0.0 && sc_hi <= 1.0) || !(t_lo > 0.0 && t_hi < 1.0) {
        return Err(Error::config("tuning bounds must lie in (0, 1] x (0, 1)"));
    }
    let objective = TuneObjective::new(model, val_set, n, fixed_seed)?;
    let mut failure = None;
    let result = pso_minimize(
        |x| match objective.criterion(x[0], x[1]) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        cfg,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (sc, t) = (result.best_position[0], result.best_position[1]);
    let (co, ce) = objective.accuracies(sc, t)?;
    let mut trace = Vec::with_capacity(result.history.len());
    for (i, (v, p)) in result.history.iter().zip(&result.positions).enumerate() {
        let (pco, pce) = objective.accuracies(p[0], p[1])?;
        trace.push(TraceRow {
            iteration: i,
            gbest_value: *v,
            gbest_sc: p[0],
            gbest_t: p[1],
            winning_weighting: winner(pco, pce),
        });
    }
    Ok(TuneResult {
        sc,
        t,
        best_accuracy: co.max(ce),
        winning_weighting: winner(co, ce),
        history: result.history,
        trace,
    })
}

pub const TRACE_CSV_HEADER: &str = "iteration,gbest_value,gbest_sc,gbest_t,winning_weighting";

pub fn write_trace_csv<W: std::io::Write>(mut out: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in trace {
        let w = match r.winning_weighting {
            Weighting::Confidence => "confidence",
            Weighting::Certainty => "certainty",
        };
        writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            r.iteration, r.gbest_value, r.gbest_sc, r.gbest_t, w
        )?;
    }
    Ok(())
}
