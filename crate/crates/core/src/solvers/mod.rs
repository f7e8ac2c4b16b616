//! SSGD, TSGD and UD.
//!
//! All three perform exactly `K` outer updates. Every outer iteration draws
//! its training indices before its validation indices from the solver
//! stream, so TSGD with `T = 1` consumes the stream exactly like SSGD.
//! `risk_path[k]` is the empirical outer risk at the state reached by outer
//! update `k + 1`.

mod config;
mod schedule;

pub use config::{Algorithm, SolverConfig, UpdateOrder};
pub use schedule::{scsc_stepsize_window, ResolvedStep, StepSchedule, StepWindow};

use crate::error::{Error, Result};
use crate::problems::BilevelProblem;
use crate::rng::RandomStream;
use crate::types::{Checkpoint, Dataset, ParameterPair, TrajectoryRecord};

/// Dispatches on `cfg.algorithm`.
pub fn run(
    problem: &dyn BilevelProblem,
    d_val: &Dataset,
    d_train: &Dataset,
    cfg: &SolverConfig,
    stream: &mut RandomStream,
) -> Result<TrajectoryRecord> {
    Engine::new(problem, d_val, d_train, cfg)?.run(stream)
}

pub fn run_ssgd(
    problem: &dyn BilevelProblem,
    d_val: &Dataset,
    d_train: &Dataset,
    cfg: &SolverConfig,
    stream: &mut RandomStream,
) -> Result<TrajectoryRecord> {
    expect(cfg, Algorithm::Ssgd)?;
    run(problem, d_val, d_train, cfg, stream)
}

pub fn run_tsgd(
    problem: &dyn BilevelProblem,
    d_val: &Dataset,
    d_train: &Dataset,
    cfg: &SolverConfig,
    stream: &mut RandomStream,
) -> Result<TrajectoryRecord> {
    expect(cfg, Algorithm::Tsgd)?;
    run(problem, d_val, d_train, cfg, stream)
}

pub fn run_ud(
    problem: &dyn BilevelProblem,
    d_val: &Dataset,
    d_train: &Dataset,
    cfg: &SolverConfig,
    stream: &mut RandomStream,
) -> Result<TrajectoryRecord> {
    expect(cfg, Algorithm::Ud)?;
    run(problem, d_val, d_train, cfg, stream)
}

fn expect(cfg: &SolverConfig, algorithm: Algorithm) -> Result<()> {
    if cfg.algorithm == algorithm {
        Ok(())
    } else {
        Err(Error::invalid(
            "algorithm",
            format!("expected {algorithm}, config says {}", cfg.algorithm),
        ))
    }
}

/// Mean outer loss over `d_val` at `(x, y)`.
fn mean_outer_loss(problem: &dyn BilevelProblem, x: &[f64], y: &[f64], d_val: &Dataset) -> f64 {
    let losses = problem.outer_losses(x, y, d_val.samples());
    losses.iter().sum::<f64>() / losses.len() as f64
}

struct Engine<'a> {
    problem: &'a dyn BilevelProblem,
    d_val: &'a Dataset,
    d_train: &'a Dataset,
    cfg: &'a SolverConfig,
    init: ParameterPair,
    steps: Option<(ResolvedStep, ResolvedStep)>,
}

/// Index buffers and gradient scratch reused across iterations.
struct Scratch {
    idx: Vec<usize>,
    grad: Vec<f64>,
    one: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Self {
            idx: Vec::new(),
            grad: vec![0.0; dim],
            one: vec![0.0; dim],
        }
    }
}

impl<'a> Engine<'a> {
    fn new(
        problem: &'a dyn BilevelProblem,
        d_val: &'a Dataset,
        d_train: &'a Dataset,
        cfg: &'a SolverConfig,
    ) -> Result<Self> {
        if d_val.is_empty() {
            return Err(Error::EmptyDataset("validation set"));
        }
        if d_train.is_empty() {
            return Err(Error::EmptyDataset("training set"));
        }
        cfg.validate(problem)?;
        let init = cfg.initial_pair(problem)?;
        let steps = if cfg.k > 0 { Some(cfg.resolve_steps(problem)?) } else { None };
        Ok(Self {
            problem,
            d_val,
            d_train,
            cfg,
            init,
            steps,
        })
    }

    /// Fills `buf` with the indices for one gradient evaluation.
    fn draw(&self, n: usize, stream: &mut RandomStream, buf: &mut Vec<usize>) {
        buf.clear();
        if self.cfg.full_batch {
            buf.extend(0..n);
        } else {
            buf.extend((0..self.cfg.batch_size).map(|_| stream.index(n)));
        }
    }

    /// Averages `grad(sample)` over `s.idx` into `s.grad`.
    fn average<F>(&self, data: &Dataset, s: &mut Scratch, grad: F)
    where
        F: Fn(&crate::types::Sample, &mut [f64]),
    {
        let Scratch { idx, grad: acc, one } = s;
        if idx.len() == 1 {
            grad(&data[idx[0]], acc);
            return;
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &i in idx.iter() {
            grad(&data[i], one);
            acc.iter_mut().zip(one.iter()).for_each(|(a, b)| *a += b);
        }
        let w = 1.0 / idx.len() as f64;
        acc.iter_mut().for_each(|v| *v *= w);
    }

    fn guard(&self, k: usize, x: &[f64], y: &[f64]) -> Result<()> {
        let mut sq = 0.0;
        for v in x.iter().chain(y) {
            if !v.is_finite() {
                return Err(Error::NonFinite { iteration: k });
            }
            sq += v * v;
        }
        let radius = self.problem.region_radius();
        let norm = sq.sqrt();
        if norm > radius {
            return Err(Error::LeftRegion {
                iteration: k,
                norm,
                radius,
            });
        }
        Ok(())
    }

    fn run(&self, stream: &mut RandomStream) -> Result<TrajectoryRecord> {
        let cfg = self.cfg;
        let p = self.problem;
        let mut x = self.init.x.clone();
        let mut y = self.init.y.clone();
        let mut checkpoints = Vec::new();
        let mut risk_path = Vec::with_capacity(if cfg.record_risk { cfg.k } else { 0 });
        let (mut sx, mut sy) = (Scratch::new(x.len()), Scratch::new(y.len()));
        let (m1, m2) = (self.d_val.len(), self.d_train.len());

        if let Some((step_x, step_y)) = self.steps {
            for k in 0..cfg.k {
                if cfg.algorithm == Algorithm::Ud {
                    y.copy_from_slice(&self.init.y);
                }
                if cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0 {
                    checkpoints.push(Checkpoint {
                        k,
                        pair: ParameterPair { x: x.clone(), y: y.clone() },
                    });
                }
                match cfg.algorithm {
                    Algorithm::Ssgd => {
                        self.draw(m2, stream, &mut sy.idx);
                        self.draw(m1, stream, &mut sx.idx);
                        self.average(self.d_train, &mut sy, |s, out| p.inner_grad_y(&x, &y, s, out));
                        if cfg.update_order == UpdateOrder::Simultaneous {
                            self.average(self.d_val, &mut sx, |s, out| p.outer_grad_x(&x, &y, s, out));
                        }
                        let eta = step_y.at(k, 0);
                        y.iter_mut().zip(&sy.grad).for_each(|(v, g)| *v -= eta * g);
                        if cfg.update_order == UpdateOrder::GaussSeidel {
                            self.average(self.d_val, &mut sx, |s, out| p.outer_grad_x(&x, &y, s, out));
                        }
                    }
                    Algorithm::Tsgd | Algorithm::Ud => {
                        for t in 0..cfg.t {
                            self.draw(m2, stream, &mut sy.idx);
                            self.average(self.d_train, &mut sy, |s, out| p.inner_grad_y(&x, &y, s, out));
                            let eta = step_y.at(k, t);
                            y.iter_mut().zip(&sy.grad).for_each(|(v, g)| *v -= eta * g);
                            self.guard(k, &x, &y)?;
                        }
                        self.draw(m1, stream, &mut sx.idx);
                        self.average(self.d_val, &mut sx, |s, out| p.outer_grad_x(&x, &y, s, out));
                    }
                }
                let eta = step_x.at(k, 0);
                x.iter_mut().zip(&sx.grad).for_each(|(v, g)| *v -= eta * g);
                self.guard(k, &x, &y)?;
                if cfg.record_risk {
                    let r = mean_outer_loss(p, &x, &y, self.d_val);
                    if !r.is_finite() {
                        return Err(Error::NonFinite { iteration: k });
                    }
                    risk_path.push(r);
                }
            }
        }
        Ok(TrajectoryRecord {
            checkpoints,
            risk_path,
            final_pair: ParameterPair { x, y },
        })
    }
}
