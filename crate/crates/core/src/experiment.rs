//! Experiment plans read from TOML, and the drivers that turn them into
//! output directories: single runs and sweeps, the success-rate table and
//! the entropy-decay comparison.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooling::CoolingParams;
use crate::dsmc::{
    run_simulation_with, success_rate, write_diagnostics_csv, Algorithm, Simulation, SimulationConfig,
    SimulationOutput, StartReport, StepDiagnostics,
};
use crate::ensemble::{InitialDistribution, RunSeed};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::fmt_f64;
use crate::objective::{Objective, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo: -20.0,
            hi: 20.0,
            nodes: 501,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.lo, self.hi, self.nodes)
    }
}

/// Cartesian sweep axes. An empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub alpha: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub k: Vec<f64>,
    pub n_particles: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// Success-rate table settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Spec {
    pub n_particles: Vec<usize>,
    pub alpha: Vec<f64>,
    pub t_final: Vec<f64>,
    pub epsilon: f64,
    pub n_repeats: usize,
}

impl Default for Table1Spec {
    fn default() -> Self {
        Table1Spec {
            n_particles: vec![50, 100, 200],
            alpha: vec![0.025, 0.05, 0.1],
            t_final: vec![50.0, 100.0],
            epsilon: 1e-2,
            n_repeats: 50,
        }
    }
}

/// Entropy-decay comparison settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySpec {
    pub alpha: Vec<f64>,
    pub epsilon: f64,
    pub n_particles: usize,
    pub t_max: f64,
    pub cadence: usize,
    /// Run the logarithmic-schedule baseline next to every plan.
    pub baseline: bool,
}

impl Default for EntropySpec {
    fn default() -> Self {
        EntropySpec {
            alpha: vec![0.025, 0.05, 0.1],
            epsilon: 1e-3,
            n_particles: 100_000,
            t_max: 1.0,
            cadence: 1,
            baseline: true,
        }
    }
}

/// The configuration file, with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSpec {
    pub objective: String,
    /// Two-column `x,F` file, used when `objective = "tabulated"`.
    pub objective_table: Option<PathBuf>,
    pub algorithm: Algorithm,
    pub n_particles: usize,
    pub t_max: f64,
    pub cadence: usize,
    pub seed: u64,
    pub t0: f64,
    /// Success radius around the minimizer.
    pub delta: f64,
    pub n_repeats: usize,
    pub literal_accept_noise: bool,
    pub cooling: CoolingParams,
    pub grid: GridSpec,
    pub initial: InitialDistribution,
    pub sweep: SweepSpec,
    pub table1: Table1Spec,
    pub entropy: EntropySpec,
}

impl Default for PlanSpec {
    fn default() -> Self {
        PlanSpec {
            objective: "benchmark-cosh".into(),
            objective_table: None,
            algorithm: Algorithm::EntksaK1,
            n_particles: 10_000,
            t_max: 10.0,
            cadence: 10,
            seed: 0,
            t0: 2.0,
            delta: 0.25,
            n_repeats: 1,
            literal_accept_noise: false,
            cooling: CoolingParams::default(),
            grid: GridSpec::default(),
            initial: InitialDistribution::default(),
            sweep: SweepSpec::default(),
            table1: Table1Spec::default(),
            entropy: EntropySpec::default(),
        }
    }
}

/// Number of steps of size `epsilon` that reach `t_max` exactly.
fn steps_for(t_max: f64, epsilon: f64, key: &str) -> Result<usize> {
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::config(key, format!("{t_max} must be finite and >= 0")));
    }
    let n = (t_max / epsilon).round();
    if (n * epsilon - t_max).abs() > 1e-9 * t_max.max(1.0) {
        return Err(Error::config(key, format!("{t_max} is not a multiple of epsilon = {epsilon}")));
    }
    Ok(n as usize)
}

impl PlanSpec {
    /// Parses TOML text, then applies `key=value` overrides. Values are TOML
    /// literals; bare words are taken as strings.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message().to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let spec: PlanSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.base_config()?.validate()?;
        if !(self.delta > 0.0) {
            return Err(Error::config("delta", "must be > 0"));
        }
        if self.n_repeats == 0 {
            return Err(Error::config("n_repeats", "must be >= 1"));
        }
        if self.objective == "tabulated" && self.objective_table.is_none() {
            return Err(Error::config("objective_table", "required for a tabulated objective"));
        }
        if self.objective != "tabulated" {
            Objective::by_name(&self.objective)?;
        }
        for (i, &a) in self.sweep.alpha.iter().chain(&self.table1.alpha).chain(&self.entropy.alpha).enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("alpha", format!("sweep value #{i} = {a} must be > 0")));
            }
        }
        for &e in &self.sweep.epsilon {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::config("sweep.epsilon", format!("{e} must lie in (0, 1]")));
            }
        }
        for &t in &self.table1.t_final {
            steps_for(t, self.table1.epsilon, "table1.t_final")?;
        }
        if !(self.table1.epsilon > 0.0 && self.table1.epsilon <= 1.0) {
            return Err(Error::config("table1.epsilon", "must lie in (0, 1]"));
        }
        if self.table1.n_repeats == 0 {
            return Err(Error::config("table1.n_repeats", "must be >= 1"));
        }
        if !(self.entropy.epsilon > 0.0 && self.entropy.epsilon <= 1.0) {
            return Err(Error::config("entropy.epsilon", "must lie in (0, 1]"));
        }
        let steps = steps_for(self.entropy.t_max, self.entropy.epsilon, "entropy.t_max")?;
        if self.entropy.cadence == 0 || steps % self.entropy.cadence != 0 {
            return Err(Error::config("entropy.cadence", "must be positive and divide the step count"));
        }
        Ok(())
    }

    pub fn build_objective(&self) -> Result<Objective> {
        match (self.objective.as_str(), &self.objective_table) {
            ("tabulated", Some(path)) => Ok(Objective::tabulated(Table::from_csv(path)?)),
            (name, _) => Objective::by_name(name),
        }
    }

    /// The run described by the top-level keys, before any sweep.
    pub fn base_config(&self) -> Result<SimulationConfig> {
        let n_steps = steps_for(self.t_max, self.cooling.epsilon, "t_max")?;
        Ok(SimulationConfig {
            objective: self.objective.clone(),
            algorithm: self.algorithm,
            n_particles: self.n_particles,
            n_steps,
            cooling: self.cooling.clone(),
            grid: self.grid.build()?,
            cadence: self.cadence,
            seed: RunSeed(self.seed),
            initial: self.initial,
            t0: self.t0,
            literal_accept_noise: self.literal_accept_noise,
        })
    }
}

fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    // serde reports unknown keys as "unknown field `name`, expected ..."
    msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "config".into())
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config(key, "empty key"))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// One concrete run of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: SimulationConfig,
}

/// A validated plan: the parsed file and its expanded variants.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub spec: PlanSpec,
    pub variants: Vec<Variant>,
}

impl ExperimentPlan {
    pub fn from_spec(spec: PlanSpec) -> Result<Self> {
        spec.validate()?;
        let base = spec.base_config()?;
        let axis = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let alphas = axis(&spec.sweep.alpha, base.cooling.alpha);
        let epsilons = axis(&spec.sweep.epsilon, base.cooling.epsilon);
        let ks = axis(&spec.sweep.k, base.cooling.k);
        let ns = if spec.sweep.n_particles.is_empty() {
            vec![base.n_particles]
        } else {
            spec.sweep.n_particles.clone()
        };
        let seeds = if spec.sweep.seeds.is_empty() {
            vec![spec.seed]
        } else {
            spec.sweep.seeds.clone()
        };
        let mut variants = Vec::new();
        for &alpha in &alphas {
            for &epsilon in &epsilons {
                for &k in &ks {
                    for &n in &ns {
                        for &seed in &seeds {
                            for rep in 0..spec.n_repeats {
                                let mut cfg = base.clone();
                                cfg.cooling.alpha = alpha;
                                cfg.cooling.epsilon = epsilon;
                                cfg.cooling.k = k;
                                cfg.n_particles = n;
                                cfg.n_steps = steps_for(spec.t_max, epsilon, "t_max")?;
                                cfg.seed = if spec.n_repeats > 1 {
                                    RunSeed(seed).child(rep as u64)
                                } else {
                                    RunSeed(seed)
                                };
                                cfg.validate()?;
                                let mut name = format!(
                                    "{}-a{alpha}-e{epsilon}-k{k}-n{n}-s{seed}",
                                    cfg.algorithm
                                );
                                if spec.n_repeats > 1 {
                                    name.push_str(&format!("-r{rep}"));
                                }
                                variants.push(Variant { name, config: cfg });
                            }
                        }
                    }
                }
            }
        }
        Ok(ExperimentPlan { spec, variants })
    }
}

/// Reads and validates a plan file.
pub fn parse_config(path: &Path) -> Result<ExperimentPlan> {
    parse_config_with(path, &[])
}

pub fn parse_config_with(path: &Path, overrides: &[String]) -> Result<ExperimentPlan> {
    let text = fs::read_to_string(path)?;
    ExperimentPlan::from_spec(PlanSpec::parse(&text, overrides)?)
}

/// Location of the success target: the benchmark minimizer, or the grid
/// minimizer of any other objective.
pub fn target_point(obj: &Objective, grid: &Grid) -> f64 {
    match obj.name() {
        "benchmark-cosh" => 2.0,
        _ => obj.locate_minimizer(grid, 1e-10),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub n_particles: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub k: f64,
    pub t_max: f64,
    pub success_rate: f64,
    pub final_h: f64,
    pub final_m_k: f64,
    pub clamps: u64,
    pub start: Option<StartReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    pub dir: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub variants: Vec<ManifestEntry>,
    /// Variants whose gain lies outside the admissible interval.
    pub warnings: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

fn write_variant(dir: &Path, out: &SimulationOutput, summary: &VariantSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_diagnostics_csv(&out.diagnostics, BufWriter::new(File::create(dir.join("diagnostics.csv"))?))?;
    out.write_snapshot_csv(BufWriter::new(File::create(dir.join("final_snapshot.csv"))?))?;
    write_json(&dir.join("summary.json"), summary)
}

/// Runs every variant of `plan` in the worker pool and writes one directory
/// per variant plus `manifest.json` under `out`.
pub fn run_plan(plan: &ExperimentPlan, out: &Path) -> Result<Manifest> {
    let obj = plan.spec.build_objective()?;
    let grid = plan.spec.grid.build()?;
    let x_star = target_point(&obj, &grid);
    fs::create_dir_all(out)?;
    let summaries: Vec<VariantSummary> = plan
        .variants
        .par_iter()
        .map(|v| {
            let result = run_simulation_with(obj.clone(), &v.config)?;
            let last = result.final_record();
            let summary = VariantSummary {
                name: v.name.clone(),
                algorithm: v.config.algorithm,
                seed: v.config.seed.0,
                n_particles: v.config.n_particles,
                alpha: v.config.cooling.alpha,
                epsilon: v.config.cooling.epsilon,
                k: v.config.cooling.k,
                t_max: v.config.t_max(),
                success_rate: success_rate(&result.positions, x_star, plan.spec.delta)?,
                final_h: last.h,
                final_m_k: last.m_k,
                clamps: last.clamps,
                start: result.start.clone(),
            };
            write_variant(&out.join(&v.name), &result, &summary)?;
            Ok(summary)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        variants: summaries
            .iter()
            .map(|s| ManifestEntry {
                name: s.name.clone(),
                seed: s.seed,
                dir: s.name.clone(),
            })
            .collect(),
        warnings: summaries
            .iter()
            .filter_map(|s| {
                let start = s.start.as_ref()?;
                (!start.alpha_admissible).then(|| {
                    format!(
                        "{}: alpha = {} outside [{}, {}]",
                        s.name, s.alpha, start.alpha_lo, start.alpha_hi
                    )
                })
            })
            .collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// One cell of the success-rate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Cell {
    pub t_final: f64,
    pub n_particles: usize,
    pub alpha: f64,
    /// Mean success rate over the repeats.
    pub n_ave: f64,
    /// Standard error of that mean.
    pub std_err: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1 {
    pub cells: Vec<Table1Cell>,
}

impl Table1 {
    pub fn cell(&self, t_final: f64, n_particles: usize, alpha: f64) -> Option<&Table1Cell> {
        self.cells
            .iter()
            .find(|c| c.t_final == t_final && c.n_particles == n_particles && c.alpha == alpha)
    }

    /// One row per `(T, N)`, one mean and one standard-error column per `alpha`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut alphas: Vec<f64> = Vec::new();
        let mut rows: Vec<(f64, usize)> = Vec::new();
        for c in &self.cells {
            if !alphas.contains(&c.alpha) {
                alphas.push(c.alpha);
            }
            if !rows.contains(&(c.t_final, c.n_particles)) {
                rows.push((c.t_final, c.n_particles));
            }
        }
        write!(out, "T,N")?;
        for a in &alphas {
            write!(out, ",alpha={a},stderr_alpha={a}")?;
        }
        writeln!(out)?;
        for (t, n) in rows {
            write!(out, "{},{}", fmt_f64(t), n)?;
            for &a in &alphas {
                match self.cell(t, n, a) {
                    Some(c) => write!(out, ",{},{}", fmt_f64(c.n_ave), fmt_f64(c.std_err))?,
                    None => write!(out, ",,")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Success rates at each final time in `t_final` (ascending) from a single
/// trajectory.
fn success_along(
    obj: &Objective,
    cfg: SimulationConfig,
    t_final: &[f64],
    x_star: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    let eps = cfg.cooling.epsilon;
    let mut sim = Simulation::new(obj.clone(), cfg)?;
    let mut rates = Vec::with_capacity(t_final.len());
    for &t in t_final {
        let target = steps_for(t, eps, "table1.t_final")?;
        while sim.steps_done() < target {
            sim.step(false).map_err(|e| Error::Aborted {
                t: sim.t(),
                source: Box::new(e),
            })?;
        }
        rates.push(success_rate(sim.ensemble().positions(), x_star, delta)?);
    }
    Ok(rates)
}

/// Mean success rate per `(T, N, alpha)` over `n_repeats` seeds of one seed
/// family. Both final times come from the same trajectories.
pub fn run_table1(spec: &PlanSpec) -> Result<Table1> {
    let t1 = &spec.table1;
    let obj = spec.build_objective()?;
    let grid = spec.grid.build()?;
    let x_star = target_point(&obj, &grid);
    let mut times = t1.t_final.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut jobs = Vec::new();
    for &n in &t1.n_particles {
        for &alpha in &t1.alpha {
            for rep in 0..t1.n_repeats {
                jobs.push((n, alpha, rep));
            }
        }
    }
    let family = RunSeed(spec.seed);
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(n, alpha, rep)| {
            let mut cfg = spec.base_config()?;
            cfg.algorithm = Algorithm::EntksaK1;
            cfg.n_particles = n;
            cfg.cooling.alpha = alpha;
            cfg.cooling.epsilon = t1.epsilon;
            cfg.cooling.k = 1.0;
            cfg.n_steps = 0;
            cfg.cadence = 1;
            cfg.seed = family.child(rep as u64);
            success_along(&obj, cfg, &times, x_star, spec.delta)
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        for &n in &t1.n_particles {
            for &alpha in &t1.alpha {
                let xs: Vec<f64> = jobs
                    .iter()
                    .zip(&results)
                    .filter(|((jn, ja, _), _)| *jn == n && *ja == alpha)
                    .map(|(_, r)| r[ti])
                    .collect();
                let (n_ave, std_err) = mean_and_stderr(&xs);
                cells.push(Table1Cell {
                    t_final: t,
                    n_particles: n,
                    alpha,
                    n_ave,
                    std_err,
                    repeats: xs.len(),
                });
            }
        }
    }
    Ok(Table1 { cells })
}

/// First time at which `h` falls to half its initial value, interpolated
/// linearly between records. `None` if it never does.
pub fn half_time(records: &[StepDiagnostics]) -> Option<f64> {
    let h0 = records.first()?.h;
    if !(h0.is_finite() && h0 > 0.0) {
        return None;
    }
    let target = 0.5 * h0;
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.h <= target {
            if !b.h.is_finite() || a.h == b.h {
                return Some(b.t);
            }
            let s = (a.h - target) / (a.h - b.h);
            return Some(a.t + s * (b.t - a.t));
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyRunSummary {
    pub label: String,
    pub algorithm: Algorithm,
    pub alpha: Option<f64>,
    pub h0: f64,
    pub half_time: Option<f64>,
    /// Times at which `I_F` changes sign.
    pub i_f_sign_changes: Vec<f64>,
    /// Fraction of records with `I_F >= 0`.
    pub i_f_nonnegative_fraction: f64,
    pub final_m_k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropySummary {
    pub epsilon: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub runs: Vec<EntropyRunSummary>,
}

fn summarize_entropy(label: String, cfg: &SimulationConfig, records: &[StepDiagnostics]) -> EntropyRunSummary {
    let signs: Vec<bool> = records.iter().map(|r| r.i_f >= 0.0).collect();
    let changes = records
        .windows(2)
        .zip(signs.windows(2))
        .filter(|(_, s)| s[0] != s[1])
        .map(|(r, _)| r[1].t)
        .collect();
    EntropyRunSummary {
        label,
        algorithm: cfg.algorithm,
        alpha: (cfg.algorithm != Algorithm::Ksa).then_some(cfg.cooling.alpha),
        h0: records.first().map_or(f64::NAN, |r| r.h),
        half_time: half_time(records),
        i_f_sign_changes: changes,
        i_f_nonnegative_fraction: signs.iter().filter(|s| **s).count() as f64 / signs.len().max(1) as f64,
        final_m_k: records.last().map_or(f64::NAN, |r| r.m_k),
    }
}

/// Runs the feedback algorithm for every `alpha` and the logarithmic
/// baseline on the same seed, and summarizes the entropy decay. Writes the
/// diagnostics when `out` is given.
pub fn run_entropy_experiment(spec: &PlanSpec, out: Option<&Path>) -> Result<EntropySummary> {
    let e = &spec.entropy;
    let obj = spec.build_objective()?;
    let mut configs = Vec::new();
    let mut base = spec.base_config()?;
    base.n_particles = e.n_particles;
    base.cooling.epsilon = e.epsilon;
    base.cooling.k = 1.0;
    base.n_steps = steps_for(e.t_max, e.epsilon, "entropy.t_max")?;
    base.cadence = e.cadence;
    for &alpha in &e.alpha {
        let mut cfg = base.clone();
        cfg.algorithm = Algorithm::EntksaK1;
        cfg.cooling.alpha = alpha;
        configs.push((format!("entksa-k1-a{alpha}"), cfg));
    }
    if e.baseline && !e.alpha.is_empty() {
        let mut cfg = base.clone();
        cfg.algorithm = Algorithm::Ksa;
        configs.push(("ksa".to_string(), cfg));
    }
    let runs: Vec<EntropyRunSummary> = configs
        .par_iter()
        .map(|(label, cfg)| {
            let result = run_simulation_with(obj.clone(), cfg)?;
            if let Some(dir) = out {
                let dir = dir.join(label);
                fs::create_dir_all(&dir)?;
                write_diagnostics_csv(&result.diagnostics, BufWriter::new(File::create(dir.join("diagnostics.csv"))?))?;
                result.write_snapshot_csv(BufWriter::new(File::create(dir.join("final_snapshot.csv"))?))?;
            }
            Ok(summarize_entropy(label.clone(), cfg, &result.diagnostics))
        })
        .collect::<Result<_>>()?;
    let summary = EntropySummary {
        epsilon: e.epsilon,
        n_particles: e.n_particles,
        seed: spec.seed,
        runs,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let spec = PlanSpec::parse("", &[]).unwrap();
        assert_eq!(spec, PlanSpec::default());
        let plan = ExperimentPlan::from_spec(spec).unwrap();
        assert_eq!(plan.variants.len(), 1);
        assert_eq!(plan.variants[0].config.algorithm, Algorithm::EntksaK1);
        assert_eq!(plan.variants[0].config.n_steps, 10_000);
    }

    #[test]
    fn keys_and_overrides() {
        let text = "alpha_unused = 1\n";
        match PlanSpec::parse(text, &[]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "alpha_unused"),
            other => panic!("{other:?}"),
        }
        let spec = PlanSpec::parse("[cooling]\nalpha = 0.05\nepsilon = 1e-3\n", &["t_max=1".into()]).unwrap();
        assert_eq!(spec.cooling.alpha, 0.05);
        assert_eq!(spec.base_config().unwrap().n_steps, 1000);
        match PlanSpec::parse("", &["cooling.p=0.6".into()]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "p"),
            other => panic!("{other:?}"),
        }
        let spec = PlanSpec::parse("", &["algorithm=ksa".into(), "initial.kind=dirac".into(), "initial.at=2".into()])
            .unwrap();
        assert_eq!(spec.algorithm, Algorithm::Ksa);
        assert_eq!(spec.initial, InitialDistribution::Dirac { at: 2.0 });
        assert!(PlanSpec::parse("", &["n_particles=\"many\"".into()]).is_err());
        assert!(PlanSpec::parse("", &["novalue".into()]).is_err());
        assert!(PlanSpec::parse("", &["t_max=0.00015".into()]).is_err());
    }

    #[test]
    fn sweep_is_cartesian() {
        let text = "t_max = 0.1\n[sweep]\nalpha = [0.025, 0.05]\nn_particles = [10, 20, 30]\n";
        let plan = ExperimentPlan::from_spec(PlanSpec::parse(text, &[]).unwrap()).unwrap();
        assert_eq!(plan.variants.len(), 6);
        let mut names: Vec<&str> = plan.variants.iter().map(|v| v.name.as_str()).collect();
        names.dedup();
        assert_eq!(names.len(), 6);
    }

    #[test]
    fn degenerate_table_is_one() {
        let mut spec = PlanSpec::default();
        spec.initial = InitialDistribution::Dirac { at: 2.0 };
        spec.table1 = Table1Spec {
            n_particles: vec![1],
            alpha: vec![0.1],
            t_final: vec![0.0],
            epsilon: 1e-2,
            n_repeats: 1,
        };
        let table = run_table1(&spec).unwrap();
        assert_eq!(table.cells.len(), 1);
        assert_eq!(table.cells[0].n_ave, 1.0);
        assert_eq!(table.cells[0].std_err, 0.0);
    }

    #[test]
    fn table_is_reproducible_and_shares_trajectories() {
        let mut spec = PlanSpec::default();
        spec.table1 = Table1Spec {
            n_particles: vec![20, 40],
            alpha: vec![0.05],
            t_final: vec![1.0, 0.5],
            epsilon: 1e-2,
            n_repeats: 3,
        };
        let a = run_table1(&spec).unwrap();
        let b = run_table1(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 4);
        assert_eq!(a.cells[0].t_final, 0.5);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let parsed = crate::io::parse_numeric_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
        assert_eq!(parsed.rows.len(), 4);
        assert_eq!(parsed.rows[2][0], 1.0);
        assert_eq!(parsed.rows[0][2], a.cell(0.5, 20, 0.05).unwrap().n_ave);
    }

    fn rec(t: f64, h: f64) -> StepDiagnostics {
        StepDiagnostics {
            t,
            h,
            m_k: 1.0,
            lambda: 0.0,
            i_f: 0.0,
            m_x: 0.0,
            var_x: 0.0,
            accept_rate: 1.0,
            eta_halfwidth: 0.0,
            clamps: 0,
            spill_fraction: 0.0,
        }
    }

    #[test]
    fn half_time_interpolates() {
        let rs = [rec(0.0, 1.0), rec(1.0, 0.8), rec(2.0, 0.4)];
        assert!((half_time(&rs).unwrap() - 1.75).abs() < 1e-15);
        assert_eq!(half_time(&rs[..2]), None);
        assert_eq!(half_time(&[]), None);
    }

    #[test]
    fn empty_entropy_plan() {
        let mut spec = PlanSpec::default();
        spec.entropy.alpha.clear();
        let summary = run_entropy_experiment(&spec, None).unwrap();
        assert!(summary.runs.is_empty());
    }
}
