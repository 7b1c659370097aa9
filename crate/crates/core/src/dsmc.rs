//! Particle optimizers: the Metropolis kernel, entropic kinetic annealing
//! with sampled (`k = 1`) or quasi-equilibrium (`k > 1`) temperatures, and
//! the logarithmic-schedule baseline.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooling::{
    alpha_bounds, lambda_k1, lambda_kgt1, log_cooling_rate, log_schedule, moment_ode_step, CoolingParams,
    CoolingState, TemperatureKick,
};
use crate::density::{cost_gap_from_costs, density_from_positions, gibbs_from_costs, relative_entropy, GridDensity};
use crate::ensemble::{
    draw_normal, draw_symmetric, init_particles, init_temperatures, mean_var, moment_of, InitialDistribution,
    ParticleEnsemble, RunSeed, TemperatureSamples, STREAM_CHUNK,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::fmt_f64;
use crate::objective::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Logarithmic schedule `T0 / log(t + 2)`.
    #[serde(rename = "ksa")]
    Ksa,
    /// Entropic feedback, one temperature per particle.
    #[serde(rename = "entksa-k1")]
    EntksaK1,
    /// Entropic feedback, quasi-equilibrium `k`-th moment.
    #[serde(rename = "entksa-kq")]
    EntksaKq,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ksa => "ksa",
            Algorithm::EntksaK1 => "entksa-k1",
            Algorithm::EntksaKq => "entksa-kq",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ksa" => Ok(Algorithm::Ksa),
            "entksa-k1" => Ok(Algorithm::EntksaK1),
            "entksa-kq" => Ok(Algorithm::EntksaKq),
            other => Err(Error::config(
                "algorithm",
                format!("unknown algorithm `{other}` (known: ksa, entksa-k1, entksa-kq)"),
            )),
        }
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub objective: String,
    pub algorithm: Algorithm,
    pub n_particles: usize,
    pub n_steps: usize,
    pub cooling: CoolingParams,
    pub grid: Grid,
    /// Diagnostics are recorded every `cadence` steps.
    pub cadence: usize,
    pub seed: RunSeed,
    pub initial: InitialDistribution,
    /// Initial temperature. The moment of the quasi-equilibrium run and the
    /// baseline schedule start from `t0 / log 2`.
    pub t0: f64,
    /// Accept when the temperature noise `eta` is below the acceptance
    /// probability, instead of drawing a fresh uniform.
    pub literal_accept_noise: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            objective: "benchmark-cosh".into(),
            algorithm: Algorithm::EntksaK1,
            n_particles: 10_000,
            n_steps: 10_000,
            cooling: CoolingParams::default(),
            grid: Grid::diagnostics_default(),
            cadence: 10,
            seed: RunSeed(0),
            initial: InitialDistribution::default(),
            t0: 2.0,
            literal_accept_noise: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.cooling.validate()?;
        Grid::new(self.grid.lo(), self.grid.hi(), self.grid.len())?;
        self.initial.validate()?;
        if self.n_particles == 0 {
            return Err(Error::config("n_particles", "must be positive"));
        }
        if self.cadence == 0 || self.n_steps % self.cadence != 0 {
            return Err(Error::config(
                "cadence",
                format!("{} must be positive and divide n_steps = {}", self.cadence, self.n_steps),
            ));
        }
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(Error::config("t0", format!("{} must be > 0", self.t0)));
        }
        if self.algorithm == Algorithm::EntksaKq && self.cooling.k <= 1.0 {
            return Err(Error::config("k", "entksa-kq needs k > 1"));
        }
        if self.algorithm == Algorithm::EntksaK1 && self.cooling.k != 1.0 {
            return Err(Error::config("k", "entksa-k1 needs k = 1"));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.cooling.epsilon
    }

    /// Model time reached after all steps.
    pub fn t_max(&self) -> f64 {
        self.n_steps as f64 * self.cooling.epsilon
    }
}

/// One diagnostics record: the state at `t` and the transition leaving it.
/// The last record of a run has no outgoing transition and reports
/// `accept_rate = 1`, `eta_halfwidth = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub h: f64,
    pub m_k: f64,
    pub lambda: f64,
    pub i_f: f64,
    pub m_x: f64,
    pub var_x: f64,
    pub accept_rate: f64,
    pub eta_halfwidth: f64,
    pub clamps: u64,
    pub spill_fraction: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "t,H,m_k,lambda,I_F,m_x,var_x,accept_rate,eta_halfwidth,clamps,spill_fraction";

impl StepDiagnostics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.t),
            fmt_f64(self.h),
            fmt_f64(self.m_k),
            fmt_f64(self.lambda),
            fmt_f64(self.i_f),
            fmt_f64(self.m_x),
            fmt_f64(self.var_x),
            fmt_f64(self.accept_rate),
            fmt_f64(self.eta_halfwidth),
            self.clamps,
            fmt_f64(self.spill_fraction)
        )
    }
}

pub fn write_diagnostics_csv<W: Write>(records: &[StepDiagnostics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// `min{1, exp(-(F(x_new) - F(x)) / D)}`.
pub fn acceptance_probability(obj: &Objective, x: f64, x_new: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidTemperature(temperature));
    }
    Ok(metropolis(obj.cost1(x_new) - obj.cost1(x), temperature))
}

#[inline]
fn metropolis(delta: f64, temperature: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-delta / temperature).exp()
    }
}

/// Fraction of positions within `delta` of `x_star`.
pub fn success_rate(positions: &[f64], x_star: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::config("delta_threshold", format!("{delta} must be > 0")));
    }
    if positions.is_empty() {
        return Err(Error::invalid("no positions"));
    }
    let hits = positions.iter().filter(|x| (*x - x_star).abs() < delta).count();
    Ok(hits as f64 / positions.len() as f64)
}

/// One Metropolis sweep at fixed temperature `temperature` with Gaussian
/// proposals of standard deviation `step_std`. `costs` caches `F` at the
/// current positions and is kept in sync. Returns the number of accepted
/// proposals.
pub fn metropolis_sweep(
    obj: &Objective,
    positions: &mut [f64],
    costs: &mut [f64],
    streams: &mut [ChaCha8Rng],
    step_std: f64,
    temperature: f64,
) -> Result<usize> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    Ok(positions
        .par_chunks_mut(STREAM_CHUNK)
        .zip(costs.par_chunks_mut(STREAM_CHUNK))
        .zip(streams.par_iter_mut())
        .map(|((xs, cs), rng)| {
            let mut accepted = 0;
            for (x, c) in xs.iter_mut().zip(cs.iter_mut()) {
                let xi = draw_normal(rng);
                let u: f64 = rng.random();
                if try_move(obj, x, c, step_std * xi, temperature, u) {
                    accepted += 1;
                }
            }
            accepted
        })
        .sum())
}

/// Proposes `x + jump`; accepts when `u < B`. Rejection leaves `x` as is.
#[inline]
fn try_move(obj: &Objective, x: &mut f64, cost: &mut f64, jump: f64, temperature: f64, u: f64) -> bool {
    if jump == 0.0 {
        return true;
    }
    let x_new = *x + jump;
    let c_new = obj.cost1(x_new);
    if u < metropolis(c_new - *cost, temperature) {
        *x = x_new;
        *cost = c_new;
        true
    } else {
        false
    }
}

/// Density-level observables of the current ensemble.
#[derive(Debug, Clone)]
pub struct Observation {
    pub density: GridDensity,
    pub gibbs: GridDensity,
    pub h: f64,
    pub i_f: f64,
    pub spill_fraction: f64,
}

/// Alpha-bound check at start-up. Outside the bounds the decay guarantee lapses.
#[derive(Debug, Clone, Serialize)]
pub struct StartReport {
    pub h0: f64,
    pub sup_f: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub alpha_admissible: bool,
}

/// A running simulation.
pub struct Simulation {
    obj: Objective,
    cfg: SimulationConfig,
    ens: ParticleEnsemble,
    costs: Vec<f64>,
    grid_costs: Vec<f64>,
    cooling: CoolingState,
    step: usize,
    start: Option<StartReport>,
}

impl Simulation {
    pub fn new(obj: Objective, cfg: SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let ens = init_particles(&cfg.initial, cfg.n_particles, 1, cfg.seed)?;
        let costs = ens.positions().iter().map(|&x| obj.cost1(x)).collect();
        let grid_costs: Vec<f64> = cfg.grid.nodes().map(|x| obj.cost1(x)).collect();
        let sup_f = grid_costs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if !(sup_f > 0.0) {
            return Err(Error::InvalidObjective);
        }
        let k0 = cfg.t0 / std::f64::consts::LN_2;
        let mut cooling = match cfg.algorithm {
            Algorithm::EntksaK1 => CoolingState::sampled(init_temperatures(cfg.t0, cfg.n_particles)?, 0.0, sup_f),
            Algorithm::EntksaKq => CoolingState::quasi_equilibrium(k0, 0.0, sup_f),
            Algorithm::Ksa => CoolingState::quasi_equilibrium(k0, 0.0, sup_f),
        };
        let mut sim = Simulation {
            obj,
            cfg,
            ens,
            costs,
            grid_costs,
            cooling: cooling.clone(),
            step: 0,
            start: None,
        };
        if sim.cfg.algorithm != Algorithm::Ksa {
            let obs = sim.observe()?;
            cooling.h0 = obs.h;
            let bounds = alpha_bounds(sim.cfg.cooling.k, sim.cfg.cooling.p, sim.cfg.cooling.sigma2, obs.h, sup_f, cooling.m_k)?;
            let admissible = !bounds.is_empty() && bounds.contains(sim.cfg.cooling.alpha);
            if !admissible {
                log::warn!(
                    "alpha = {} outside the admissible interval ({}, {}]; the decay guarantee does not apply",
                    sim.cfg.cooling.alpha,
                    bounds.lo,
                    bounds.hi
                );
            }
            sim.start = Some(StartReport {
                h0: obs.h,
                sup_f,
                alpha_lo: bounds.lo,
                alpha_hi: bounds.hi,
                alpha_admissible: admissible,
            });
            sim.cooling = cooling;
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ens
    }

    pub fn cooling(&self) -> &CoolingState {
        &self.cooling
    }

    pub fn start_report(&self) -> Option<&StartReport> {
        self.start.as_ref()
    }

    pub fn t(&self) -> f64 {
        self.step as f64 * self.cfg.cooling.epsilon
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Diffusion coefficient `D` seen by the particles now.
    pub fn temperature(&self) -> f64 {
        match self.cfg.algorithm {
            Algorithm::Ksa => log_schedule(self.cfg.t0, self.t()),
            _ => self.cooling.m_k,
        }
    }

    /// Histogram, Gibbs density, entropy and cost gap of the current state.
    pub fn observe(&self) -> Result<Observation> {
        let (density, stats) = density_from_positions(self.ens.positions(), &self.cfg.grid)?;
        stats.check_reliable()?;
        let d = self.temperature();
        if !(d > 0.0) {
            return Err(Error::InvalidTemperature(d));
        }
        let gibbs = gibbs_from_costs(&self.grid_costs, d, &self.cfg.grid)?;
        let h = relative_entropy(&density, &gibbs)?;
        let i_f = cost_gap_from_costs(&self.grid_costs, &density, &gibbs);
        Ok(Observation {
            density,
            gibbs,
            h,
            i_f,
            spill_fraction: stats.spill_fraction(),
        })
    }

    fn record(&self, obs: Option<&Observation>, lambda: f64, accept_rate: f64, eta_halfwidth: f64) -> StepDiagnostics {
        let (m_x, var_x) = mean_var(self.ens.positions());
        let (h, i_f, spill_fraction) = match obs {
            Some(o) => (o.h, o.i_f, o.spill_fraction),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        StepDiagnostics {
            t: self.t(),
            h,
            m_k: self.temperature(),
            lambda,
            i_f,
            m_x,
            var_x,
            accept_rate,
            eta_halfwidth,
            clamps: self.cooling.clamps,
            spill_fraction,
        }
    }

    /// Performs one transition and returns the record of the state it left.
    /// Density observables are computed only when `observe` is set, except
    /// for the feedback algorithms, which need them every step.
    pub fn step(&mut self, observe: bool) -> Result<StepDiagnostics> {
        let rec = match self.cfg.algorithm {
            Algorithm::EntksaK1 => self.step_k1()?,
            Algorithm::EntksaKq => self.step_kq()?,
            Algorithm::Ksa => self.step_ksa(observe)?,
        };
        self.step += 1;
        self.cooling.t = self.t();
        Ok(rec)
    }

    /// Record of the current state with no outgoing transition.
    pub fn terminal_record(&self) -> Result<StepDiagnostics> {
        let obs = self.observe_if_possible()?;
        let lambda = match self.cfg.algorithm {
            Algorithm::Ksa => log_cooling_rate(self.t()),
            _ => self.cooling.lambda,
        };
        Ok(self.record(obs.as_ref(), lambda, 1.0, 0.0))
    }

    fn observe_if_possible(&self) -> Result<Option<Observation>> {
        if self.temperature() > 0.0 {
            Ok(Some(self.observe()?))
        } else {
            Ok(None)
        }
    }

    fn step_k1(&mut self) -> Result<StepDiagnostics> {
        let m1 = self.cooling.m_k;
        let obs = self.observe_if_possible()?;
        let params = self.cfg.cooling;
        let control = lambda_k1(
            m1,
            self.cooling.h0,
            self.cooling.sup_f,
            params.alpha,
            self.t(),
            obs.as_ref().map_or(0.0, |o| o.i_f),
        )?;
        self.cooling.record_control(control);
        let kick = TemperatureKick::new(control.lambda, &params)?;
        let step_std = (2.0 * params.epsilon * m1).sqrt();
        let literal = self.cfg.literal_accept_noise;
        let obj = &self.obj;
        let temps = match &mut self.cooling.temperature {
            crate::cooling::TemperatureState::Sampled(t) => t,
            crate::cooling::TemperatureState::QuasiEquilibrium => unreachable!("k1 runs hold samples"),
        };
        let (positions, streams, _) = self.ens.parts_mut();
        let accepted: usize = positions
            .par_chunks_mut(STREAM_CHUNK)
            .zip(self.costs.par_chunks_mut(STREAM_CHUNK))
            .zip(temps.as_mut_slice().par_chunks_mut(STREAM_CHUNK))
            .zip(streams.par_iter_mut())
            .map(|(((xs, cs), ts), rng)| {
                let mut accepted = 0;
                for ((x, c), t) in xs.iter_mut().zip(cs.iter_mut()).zip(ts.iter_mut()) {
                    let xi = draw_normal(rng);
                    let eta = draw_symmetric(rng, kick.half_width());
                    let u = if literal { eta } else { rng.random() };
                    // m1 = 0 freezes the positions
                    if m1 <= 0.0 || try_move(obj, x, c, step_std * xi, m1, u) {
                        accepted += 1;
                    }
                    *t = kick.kick_one(*t, eta, rng);
                }
                accepted
            })
            .sum();
        let accept_rate = accepted as f64 / self.costs.len() as f64;
        let rec = self.record(obs.as_ref(), control.lambda, accept_rate, kick.half_width());
        self.cooling.m_k = moment_of(temps_slice(&self.cooling), 1.0);
        Ok(rec)
    }

    fn step_kq(&mut self) -> Result<StepDiagnostics> {
        let mk = self.cooling.m_k;
        let obs = self.observe_if_possible()?;
        let params = self.cfg.cooling;
        let control = lambda_kgt1(
            mk,
            self.cooling.h0,
            self.cooling.sup_f,
            params.alpha,
            params.k,
            params.p,
            params.sigma2,
            self.t(),
            obs.as_ref().map_or(0.0, |o| o.i_f),
        )?;
        self.cooling.record_control(control);
        let accepted = self.sweep(mk)?;
        let rec = self.record(obs.as_ref(), control.lambda, accepted, 0.0);
        self.cooling.m_k = moment_ode_step(mk, control.lambda, params.epsilon, &params)?;
        Ok(rec)
    }

    fn step_ksa(&mut self, observe: bool) -> Result<StepDiagnostics> {
        let d = self.temperature();
        let obs = if observe { Some(self.observe()?) } else { None };
        let accepted = self.sweep(d)?;
        Ok(self.record(obs.as_ref(), log_cooling_rate(self.t()), accepted, 0.0))
    }

    /// Metropolis sweep at diffusion `d`; returns the acceptance rate.
    fn sweep(&mut self, d: f64) -> Result<f64> {
        let n = self.costs.len() as f64;
        if d <= 0.0 {
            return Ok(1.0);
        }
        let step_std = (2.0 * self.cfg.cooling.epsilon * d).sqrt();
        let (positions, streams, _) = self.ens.parts_mut();
        let accepted = metropolis_sweep(&self.obj, positions, &mut self.costs, streams, step_std, d)?;
        Ok(accepted as f64 / n)
    }
}

fn temps_slice(state: &CoolingState) -> &[f64] {
    state.samples().map_or(&[], TemperatureSamples::as_slice)
}

/// Diagnostics and final state of a run.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub diagnostics: Vec<StepDiagnostics>,
    pub positions: Vec<f64>,
    /// Per-particle temperatures; the common diffusion coefficient when the
    /// run does not sample temperatures.
    pub temperatures: Vec<f64>,
    pub start: Option<StartReport>,
}

impl SimulationOutput {
    pub fn write_snapshot_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,position,temperature")?;
        for (i, (x, t)) in self.positions.iter().zip(&self.temperatures).enumerate() {
            writeln!(out, "{i},{},{}", fmt_f64(*x), fmt_f64(*t))?;
        }
        Ok(())
    }

    pub fn final_record(&self) -> &StepDiagnostics {
        self.diagnostics.last().expect("a run always records t = 0")
    }
}

/// Runs the configured objective for `n_steps`.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationOutput> {
    let obj = Objective::by_name(&cfg.objective)?;
    run_simulation_with(obj, cfg)
}

/// Runs a simulation on an explicit objective. A failing step aborts the
/// run; the last completed record is logged.
pub fn run_simulation_with(obj: Objective, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    let mut sim = Simulation::new(obj, cfg.clone())?;
    let mut diagnostics = Vec::with_capacity(cfg.n_steps / cfg.cadence + 1);
    for n in 0..cfg.n_steps {
        let keep = n % cfg.cadence == 0;
        match sim.step(keep) {
            Ok(rec) => {
                if keep {
                    diagnostics.push(rec);
                }
            }
            Err(e) => {
                if let Some(last) = diagnostics.last() {
                    log::error!("last record before abort: {}", last.csv_row());
                }
                return Err(Error::Aborted {
                    t: sim.t(),
                    source: Box::new(e),
                });
            }
        }
    }
    diagnostics.push(sim.terminal_record()?);
    let positions = sim.ens.positions().to_vec();
    let temperatures = match sim.cooling.samples() {
        Some(t) => t.as_slice().to_vec(),
        None => vec![sim.temperature(); positions.len()],
    };
    Ok(SimulationOutput {
        diagnostics,
        positions,
        temperatures,
        start: sim.start,
    })
}

/// Fixed-temperature Metropolis chain from `initial`, for `n_steps` sweeps
/// with proposal variance `2 epsilon D`. Returns the final positions.
pub fn frozen_chain(
    obj: &Objective,
    initial: &InitialDistribution,
    n_particles: usize,
    n_steps: usize,
    epsilon: f64,
    temperature: f64,
    seed: RunSeed,
) -> Result<Vec<f64>> {
    let mut ens = init_particles(initial, n_particles, 1, seed)?;
    let mut costs: Vec<f64> = ens.positions().iter().map(|&x| obj.cost1(x)).collect();
    let step_std = (2.0 * epsilon * temperature).sqrt();
    let (positions, streams, _) = ens.parts_mut();
    for _ in 0..n_steps {
        metropolis_sweep(obj, positions, &mut costs, streams, step_std, temperature)?;
    }
    Ok(ens.positions().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXP_MINUS_TENTH: f64 = 0.904_837_418_035_959_6;

    fn small(algorithm: Algorithm) -> SimulationConfig {
        let mut cfg = SimulationConfig {
            algorithm,
            n_particles: 2000,
            n_steps: 200,
            cadence: 10,
            seed: RunSeed(17),
            ..SimulationConfig::default()
        };
        cfg.cooling.epsilon = 1e-2;
        if algorithm == Algorithm::EntksaKq {
            cfg.cooling.k = 2.0;
        }
        cfg
    }

    #[test]
    fn acceptance_examples() {
        let flat = Objective::from_fn("c3", |x| if x > 0.5 { 3.1 } else { 3.0 }, None, (-1.0, 1.0));
        assert_eq!(acceptance_probability(&flat, 1.0, 0.0, 1.0).unwrap(), 1.0);
        let b = acceptance_probability(&flat, 0.0, 1.0, 1.0).unwrap();
        assert!((b - EXP_MINUS_TENTH).abs() < 1e-15);
        assert!(matches!(
            acceptance_probability(&flat, 0.0, 1.0, 0.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn detailed_balance_identity() {
        let obj = Objective::benchmark();
        let mut rng = RunSeed(2).stream(0);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-5.0..5.0);
            let y: f64 = rng.random_range(-5.0..5.0);
            let d: f64 = rng.random_range(0.1..3.0);
            let lhs = acceptance_probability(&obj, x, y, d).unwrap() * (-obj.cost1(x) / d).exp();
            let rhs = acceptance_probability(&obj, y, x, d).unwrap() * (-obj.cost1(y) / d).exp();
            assert!((lhs - rhs).abs() <= 1e-14 * lhs.max(rhs));
        }
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(success_rate(&[2.0; 5], 2.0, 0.25).unwrap(), 1.0);
        assert_eq!(success_rate(&[5.0, -3.0], 2.0, 0.25).unwrap(), 0.0);
        assert_eq!(success_rate(&[2.1, 5.0], 2.0, 0.25).unwrap(), 0.5);
        assert!(success_rate(&[2.0], 2.0, 0.0).is_err());
    }

    #[test]
    fn zero_jump_keeps_everything() {
        let obj = Objective::benchmark();
        let mut ens = init_particles(&InitialDistribution::default(), 3000, 1, RunSeed(1)).unwrap();
        let before = ens.positions().to_vec();
        let mut costs: Vec<f64> = before.iter().map(|&x| obj.cost1(x)).collect();
        let (p, s, _) = ens.parts_mut();
        let acc = metropolis_sweep(&obj, p, &mut costs, s, 0.0, 1.0).unwrap();
        assert_eq!(acc, 3000);
        assert_eq!(ens.positions(), &before[..]);
    }

    #[test]
    fn constant_objective_accepts_everything() {
        let obj = Objective::from_fn("c", |_| 3.0, None, (-20.0, 20.0));
        let mut cfg = small(Algorithm::EntksaK1);
        cfg.objective = "c".into();
        let out = run_simulation_with(obj, &cfg).unwrap();
        assert!(out.diagnostics.iter().all(|r| r.accept_rate == 1.0));
    }

    #[test]
    fn rejected_moves_stay_put() {
        // a wall the particles can never climb at this temperature
        let obj = Objective::from_fn("wall", |x| if x.abs() < 1.0 { 0.0 } else { 1e6 }, None, (-2.0, 2.0));
        let mut ens = ParticleEnsemble::from_positions(vec![0.0; 4000], 1, RunSeed(3)).unwrap();
        let mut costs = vec![0.0; 4000];
        let (p, s, _) = ens.parts_mut();
        let mut accepted = 0;
        for _ in 0..50 {
            accepted += metropolis_sweep(&obj, p, &mut costs, s, 0.5, 1.0).unwrap();
        }
        assert!(accepted > 0);
        assert!(ens.positions().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn empty_run_has_one_record() {
        let mut cfg = small(Algorithm::EntksaK1);
        cfg.n_steps = 0;
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].t, 0.0);
    }

    #[test]
    fn records_follow_cadence() {
        let cfg = small(Algorithm::EntksaK1);
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.diagnostics.len(), cfg.n_steps / cfg.cadence + 1);
        for w in out.diagnostics.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        let last = out.final_record();
        assert!((last.t - cfg.t_max()).abs() < 1e-12);
        for r in &out.diagnostics {
            assert!((0.0..=1.0).contains(&r.accept_rate));
            assert!((0.0..=1.0).contains(&r.lambda));
            assert!(r.h.is_finite() && r.h >= 0.0);
        }
        assert!(out.temperatures.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn cadence_must_divide_steps() {
        let mut cfg = small(Algorithm::Ksa);
        cfg.cadence = 7;
        assert!(matches!(run_simulation(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn ksa_follows_log_schedule() {
        let cfg = small(Algorithm::Ksa);
        let out = run_simulation(&cfg).unwrap();
        let first = out.diagnostics[0];
        assert!((first.m_k - 2.0 / std::f64::consts::LN_2).abs() < 1e-14);
        for r in &out.diagnostics {
            assert!((r.m_k - log_schedule(2.0, r.t)).abs() < 1e-14);
        }
    }

    #[test]
    fn kq_moment_is_nonincreasing_without_noise() {
        let mut cfg = small(Algorithm::EntksaKq);
        cfg.cooling.sigma2 = 0.0;
        let out = run_simulation(&cfg).unwrap();
        assert!((out.diagnostics[0].m_k - 2.0 / std::f64::consts::LN_2).abs() < 1e-14);
        for w in out.diagnostics.windows(2) {
            assert!(w[1].m_k <= w[0].m_k);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for algo in [Algorithm::EntksaK1, Algorithm::EntksaKq, Algorithm::Ksa] {
            let cfg = small(algo);
            let a = run_simulation(&cfg).unwrap();
            let b = run_simulation(&cfg).unwrap();
            let (mut ca, mut cb) = (Vec::new(), Vec::new());
            write_diagnostics_csv(&a.diagnostics, &mut ca).unwrap();
            write_diagnostics_csv(&b.diagnostics, &mut cb).unwrap();
            assert_eq!(ca, cb);
            assert_eq!(a.positions, b.positions);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = small(Algorithm::EntksaK1);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_simulation(&cfg).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.temperatures, b.temperatures);
    }

    #[test]
    fn spill_aborts_the_run() {
        let mut cfg = small(Algorithm::EntksaK1);
        cfg.grid = Grid::new(0.9, 2.1, 31).unwrap();
        cfg.n_steps = 2000;
        cfg.cadence = 100;
        match run_simulation(&cfg) {
            Err(Error::Aborted { source, .. }) => {
                assert!(matches!(*source, Error::UnreliableDiagnostics { .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapshot_csv_layout() {
        let mut cfg = small(Algorithm::EntksaK1);
        cfg.n_particles = 3;
        cfg.n_steps = 0;
        let out = run_simulation(&cfg).unwrap();
        let mut buf = Vec::new();
        out.write_snapshot_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("index,position,temperature\n0,"));
    }
}
