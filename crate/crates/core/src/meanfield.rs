//! Deterministic one-dimensional solver for the mean-field system: the
//! Fokker-Planck equation `f_t = (F' f + D f_x)_x` with zero-flux
//! boundaries, coupled to the first temperature moment through the
//! feedback control.
//!
//! The flux between nodes `i` and `i + 1` is the exponentially fitted
//! (Scharfetter-Gummel) flux `J = (D/h) [B(w) f_i - B(-w) f_{i+1}]` with
//! `w = (F_{i+1} - F_i) / D` and `B(w) = w / (e^w - 1)`. Its zero set is
//! exactly the discrete Gibbs density, and the trapezoidal mass is conserved
//! by construction.

use serde::Serialize;

use crate::cooling::{lambda_k1, log_cooling_rate, CoolingParams};
use crate::density::{cost_gap_from_costs, gibbs_from_costs, relative_entropy, GridDensity};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::objective::Objective;

/// Largest tolerated change of the trapezoidal mass in one step.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Nodes below this density are left out of the Fisher information.
pub const FISHER_FLOOR: f64 = 1e-12;

/// `w / (e^w - 1)`, with its series near 0.
fn bernoulli(w: f64) -> f64 {
    if w.abs() < 1e-6 {
        1.0 - 0.5 * w + w * w / 12.0
    } else {
        w / w.exp_m1()
    }
}

/// Edge coefficients `(a, b)` with `J = a f_i - b f_{i+1}`.
fn edge_rates(df: f64, d: f64, h: f64) -> (f64, f64) {
    if d <= 0.0 {
        return ((-df).max(0.0) / h, df.max(0.0) / h);
    }
    let w = df / d;
    (d / h * bernoulli(w), d / h * bernoulli(-w))
}

/// State of the mean-field solver.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub f: GridDensity,
    pub m_k: f64,
    pub lambda: f64,
    pub t: f64,
}

/// Discretized Fokker-Planck operator for a fixed objective and grid.
#[derive(Debug, Clone)]
pub struct FokkerPlanck {
    grid: Grid,
    costs: Vec<f64>,
    weights: Vec<f64>,
}

impl FokkerPlanck {
    pub fn new(obj: &Objective, grid: Grid) -> Result<Self> {
        if !obj.is_smooth() {
            return Err(Error::UnsupportedObjective(format!(
                "`{}` is not smooth; the mean-field solver needs a differentiable cost",
                obj.name()
            )));
        }
        let costs = grid.nodes().map(|x| obj.cost1(x)).collect();
        let weights = (0..grid.len()).map(|i| grid.weight(i)).collect();
        Ok(FokkerPlanck { grid, costs, weights })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn rates(&self, d: f64) -> Vec<(f64, f64)> {
        let h = self.grid.spacing();
        self.costs.windows(2).map(|c| edge_rates(c[1] - c[0], d, h)).collect()
    }

    /// Largest explicit step keeping every diagonal coefficient nonnegative.
    /// Reduces to `h^2 / (2D)` for pure diffusion.
    pub fn stable_step(&self, d: f64) -> f64 {
        let rates = self.rates(d);
        let n = self.weights.len();
        let mut limit = f64::INFINITY;
        for i in 0..n {
            let out_right = if i + 1 < n { rates[i].0 } else { 0.0 };
            let out_left = if i > 0 { rates[i - 1].1 } else { 0.0 };
            let out = out_right + out_left;
            if out > 0.0 {
                limit = limit.min(self.weights[i] / out);
            }
        }
        limit
    }

    /// One explicit Euler step at diffusion `d`, in place.
    pub fn step(&self, f: &mut [f64], d: f64, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(dt));
        }
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidTemperature(d));
        }
        if f.len() != self.costs.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", f.len(), self.costs.len())));
        }
        let limit = self.stable_step(d);
        if dt > limit {
            return Err(Error::StepSize { dt, limit });
        }
        let mass_before = self.grid.trapezoid(f);
        let rates = self.rates(d);
        let flux: Vec<f64> = rates
            .iter()
            .enumerate()
            .map(|(i, (a, b))| a * f[i] - b * f[i + 1])
            .collect();
        let n = f.len();
        for i in 0..n {
            let right = if i + 1 < n { flux[i] } else { 0.0 };
            let left = if i > 0 { flux[i - 1] } else { 0.0 };
            f[i] -= dt * (right - left) / self.weights[i];
        }
        let drift = (self.grid.trapezoid(f) - mass_before).abs();
        if drift > MASS_TOLERANCE {
            return Err(Error::MassDrift(drift));
        }
        Ok(())
    }

    /// Entropy dissipation of the discrete operator at diffusion `d`:
    /// `sum_edges a_i fq_i (u_{i+1} - u_i) (log u_{i+1} - log u_i)`, with
    /// `u = f / fq`. Equals `-dH/dt` of the semi-discrete flow exactly.
    pub fn dissipation(&self, f: &GridDensity, fq: &GridDensity, d: f64) -> f64 {
        let rates = self.rates(d);
        let (fv, qv) = (f.values(), fq.values());
        let mut total = 0.0;
        for (i, (a, _)) in rates.iter().enumerate() {
            let (u0, u1) = (fv[i] / qv[i], fv[i + 1] / qv[i + 1]);
            if u0 <= 0.0 || u1 <= 0.0 {
                continue;
            }
            total += a * qv[i] * (u1 - u0) * (u1.ln() - u0.ln());
        }
        total
    }
}

/// One step of the Fokker-Planck equation with `D = state.m_k`. The moment
/// and the control are left untouched.
pub fn fp_step(state: &mut MeanFieldState, obj: &Objective, dt: f64) -> Result<()> {
    let op = FokkerPlanck::new(obj, *state.f.grid())?;
    let mut values = state.f.values().to_vec();
    op.step(&mut values, state.m_k, dt)?;
    state.f = GridDensity::from_normalized(*state.f.grid(), values);
    state.t += dt;
    Ok(())
}

/// `∫ D f |∂_x log(f / fq)|^2` with central differences on interior nodes.
pub fn fisher_information(f: &GridDensity, fq: &GridDensity, d: f64) -> Result<f64> {
    if f.grid() != fq.grid() {
        return Err(Error::invalid("fisher information needs densities on one grid"));
    }
    let grid = f.grid();
    let h = grid.spacing();
    let (fv, qv) = (f.values(), fq.values());
    let n = fv.len();
    let ok = |i: usize| fv[i] >= FISHER_FLOOR && qv[i] > 0.0;
    let mut integrand = vec![0.0; n];
    for i in 1..n - 1 {
        if ok(i - 1) && ok(i) && ok(i + 1) {
            let g = ((fv[i + 1] / qv[i + 1]).ln() - (fv[i - 1] / qv[i - 1]).ln()) / (2.0 * h);
            integrand[i] = d * fv[i] * g * g;
        }
    }
    Ok(grid.trapezoid(&integrand))
}

/// How the control is chosen along a mean-field trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlLaw {
    /// Entropy feedback with gain `alpha`.
    Feedback,
    /// `lambda = 0`: the temperature is frozen.
    Zero,
    /// `lambda(t) = 1 / ((t + 2) log(t + 2))`.
    Forced,
}

/// Scalars recorded at every mean-field step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanFieldRecord {
    pub t: f64,
    pub m_k: f64,
    pub lambda: f64,
    pub h: f64,
    pub i_f: f64,
    /// Dissipation of the discrete operator.
    pub dissipation: f64,
}

#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    pub records: Vec<MeanFieldRecord>,
    pub h0: f64,
    pub final_state: MeanFieldState,
    /// `(step index, density)` every `snapshot_every` steps.
    pub snapshots: Vec<(usize, GridDensity)>,
}

/// Settings for [`evolve_coupled`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledRun {
    pub m0: f64,
    pub t_max: f64,
    pub dt: f64,
    pub control: ControlLaw,
    /// Keep a density snapshot every this many steps; 0 keeps none.
    pub snapshot_every: usize,
}

/// Integrates the coupled system: Fokker-Planck at `D = m_1`, then
/// `m_1 <- m_1 (1 - lambda dt)`, with `lambda` computed from the current
/// density. Records are taken before every step and once at the end.
pub fn evolve_coupled(
    initial: &GridDensity,
    obj: &Objective,
    params: &CoolingParams,
    run: &CoupledRun,
) -> Result<MeanFieldTrajectory> {
    if params.k != 1.0 {
        return Err(Error::config("k", "the coupled mean-field solver is specified for k = 1"));
    }
    if !(run.m0 > 0.0) {
        return Err(Error::InvalidTemperature(run.m0));
    }
    if !(run.dt > 0.0 && run.t_max >= 0.0) {
        return Err(Error::InvalidStep(run.dt));
    }
    let grid = *initial.grid();
    let op = FokkerPlanck::new(obj, grid)?;
    let sup_f = op.costs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if !(sup_f > 0.0) {
        return Err(Error::InvalidObjective);
    }
    let n_steps = (run.t_max / run.dt).round() as usize;
    let mut f = initial.values().to_vec();
    let mut m1 = run.m0;
    let h0 = {
        let fq = gibbs_from_costs(&op.costs, m1, &grid)?;
        relative_entropy(initial, &fq)?
    };
    let mut records = Vec::with_capacity(n_steps + 1);
    let mut snapshots = Vec::new();
    let mut lambda = 0.0;
    for n in 0..=n_steps {
        let t = n as f64 * run.dt;
        let density = GridDensity::from_normalized(grid, f.clone());
        let fq = gibbs_from_costs(&op.costs, m1, &grid)?;
        let h = relative_entropy(&density, &fq)?;
        let i_f = cost_gap_from_costs(&op.costs, &density, &fq);
        lambda = match run.control {
            ControlLaw::Zero => 0.0,
            ControlLaw::Forced => log_cooling_rate(t),
            ControlLaw::Feedback => lambda_k1(m1, h0, sup_f, params.alpha, t, i_f)?.lambda,
        };
        records.push(MeanFieldRecord {
            t,
            m_k: m1,
            lambda,
            h,
            i_f,
            dissipation: op.dissipation(&density, &fq, m1),
        });
        if run.snapshot_every > 0 && n % run.snapshot_every == 0 {
            snapshots.push((n, density));
        }
        if n == n_steps {
            break;
        }
        op.step(&mut f, m1, run.dt).map_err(|e| Error::Aborted {
            t,
            source: Box::new(e),
        })?;
        m1 *= 1.0 - lambda * run.dt;
    }
    Ok(MeanFieldTrajectory {
        records,
        h0,
        final_state: MeanFieldState {
            f: GridDensity::from_normalized(grid, f),
            m_k: m1,
            lambda,
            t: n_steps as f64 * run.dt,
        },
        snapshots,
    })
}

/// `|(H_{n+1} - H_{n-1}) / (2 dt) - RHS_n|` at the middle of a window of
/// three consecutive records, where
/// `RHS = -I_H - (D'/D^2) ∫ F (f - fq)` and `D' = -lambda m_1`.
pub fn entropy_balance_residual(window: &[MeanFieldRecord]) -> Result<f64> {
    if window.len() < 3 {
        return Err(Error::invalid("entropy balance needs at least 3 consecutive records"));
    }
    let mid = window.len() / 2;
    let (prev, cur, next) = (&window[mid - 1], &window[mid], &window[mid + 1]);
    let dt = 0.5 * (next.t - prev.t);
    let dh = (next.h - prev.h) / (2.0 * dt);
    let d_dot = -cur.lambda * cur.m_k;
    // ∫ F (f - fq) = -I_F
    let rhs = -cur.dissipation - d_dot / (cur.m_k * cur.m_k) * (-cur.i_f);
    Ok((dh - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: Grid, mean: f64, std: f64) -> GridDensity {
        GridDensity::tabulate(grid, |x| (-0.5 * ((x - mean) / std).powi(2)).exp()).unwrap()
    }

    #[test]
    fn bernoulli_is_smooth_at_zero() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-7) - bernoulli(-1e-7)).abs() < 1e-6);
        assert!((bernoulli(2e-6) - 2e-6 / (2e-6f64).exp_m1()).abs() < 1e-12);
        // B(-w) = e^w B(w)
        let w = 0.7f64;
        assert!((bernoulli(-w) - w.exp() * bernoulli(w)).abs() < 1e-14);
    }

    #[test]
    fn pure_diffusion_spreads_variance() {
        let grid = Grid::new(-10.0, 10.0, 401).unwrap();
        let flat = Objective::from_fn("c", |_| 1.0, Some(std::sync::Arc::new(|_| 0.0)), (-10.0, 10.0));
        let mut state = MeanFieldState {
            f: gaussian(grid, 0.5, 1.0),
            m_k: 0.7,
            lambda: 0.0,
            t: 0.0,
        };
        let v0 = state.f.variance();
        let dt = 1e-3;
        for _ in 0..100 {
            fp_step(&mut state, &flat, dt).unwrap();
        }
        assert!((state.f.mass() - 1.0).abs() < 1e-12);
        let growth = state.f.variance() - v0;
        let expected = 2.0 * 0.7 * 0.1;
        assert!((growth - expected).abs() < 1e-6 * expected, "growth {growth}");
    }

    #[test]
    fn frozen_when_no_drift_and_no_diffusion() {
        let grid = Grid::new(-1.0, 1.0, 21).unwrap();
        let flat = Objective::from_fn("c", |_| 0.0, Some(std::sync::Arc::new(|_| 0.0)), (-1.0, 1.0));
        let f0 = gaussian(grid, 0.0, 0.3);
        let mut state = MeanFieldState {
            f: f0.clone(),
            m_k: 0.0,
            lambda: 0.0,
            t: 0.0,
        };
        fp_step(&mut state, &flat, 0.1).unwrap();
        assert_eq!(state.f, f0);
    }

    #[test]
    fn relaxes_to_discrete_gibbs() {
        let grid = Grid::new(-8.0, 8.0, 321).unwrap();
        let obj = Objective::quadratic(0.0, 1.0);
        let op = FokkerPlanck::new(&obj, grid).unwrap();
        let d = 1.0;
        let dt = 0.9 * op.stable_step(d);
        let mut f = gaussian(grid, 2.0, 0.5).values().to_vec();
        let steps = (40.0 / dt) as usize;
        for _ in 0..steps {
            op.step(&mut f, d, dt).unwrap();
        }
        let fq = gibbs_from_costs(op.costs(), d, &grid).unwrap();
        let err = f.iter().zip(fq.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
        // and the discrete Gibbs density is the continuous one up to O(h^2)
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        for (x, v) in grid.nodes().zip(fq.values()) {
            assert!((v - norm * (-0.5 * x * x).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_unstable_steps_and_rough_objectives() {
        let grid = Grid::new(-4.0, 4.0, 101).unwrap();
        let obj = Objective::double_well(0.1);
        let op = FokkerPlanck::new(&obj, grid).unwrap();
        let mut f = gaussian(grid, 0.0, 1.0).values().to_vec();
        let limit = op.stable_step(1.0);
        assert!(matches!(op.step(&mut f, 1.0, 2.0 * limit), Err(Error::StepSize { .. })));
        assert!(matches!(
            FokkerPlanck::new(&Objective::benchmark(), grid),
            Err(Error::UnsupportedObjective(_))
        ));
        // pure diffusion limit matches h^2 / (2D)
        let flat = Objective::from_fn("c", |_| 0.0, Some(std::sync::Arc::new(|_| 0.0)), (-4.0, 4.0));
        let op = FokkerPlanck::new(&flat, grid).unwrap();
        let h = grid.spacing();
        assert!((op.stable_step(0.5) - h * h).abs() < 1e-15);
    }

    #[test]
    fn positivity_is_preserved() {
        let grid = Grid::new(-4.0, 4.0, 201).unwrap();
        let obj = Objective::double_well(0.1);
        let op = FokkerPlanck::new(&obj, grid).unwrap();
        let mut f = GridDensity::tabulate(grid, |x| if (1.0..=2.0).contains(&x) { 1.0 } else { 0.0 })
            .unwrap()
            .values()
            .to_vec();
        let dt = op.stable_step(0.8);
        for _ in 0..2000 {
            op.step(&mut f, 0.8, dt).unwrap();
            assert!(f.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn fisher_examples() {
        let grid = Grid::new(-12.0, 12.0, 2401).unwrap();
        let q = gaussian(grid, 0.0, 1.0);
        assert_eq!(fisher_information(&q, &q, 1.0).unwrap(), 0.0);
        let f = gaussian(grid, 0.8, 1.0);
        let i = fisher_information(&f, &q, 1.0).unwrap();
        assert!((i - 0.64).abs() < 1e-3, "{i}");
        let other = gaussian(Grid::new(-12.0, 12.0, 11).unwrap(), 0.0, 1.0);
        assert!(fisher_information(&f, &other, 1.0).is_err());
    }

    #[test]
    fn dissipation_is_nonnegative_and_vanishes_at_gibbs() {
        let grid = Grid::new(-4.0, 4.0, 201).unwrap();
        let obj = Objective::double_well(0.1);
        let op = FokkerPlanck::new(&obj, grid).unwrap();
        let fq = gibbs_from_costs(op.costs(), 0.6, &grid).unwrap();
        assert!(op.dissipation(&fq, &fq, 0.6).abs() < 1e-14);
        let f = gaussian(grid, 1.0, 0.4);
        assert!(op.dissipation(&f, &fq, 0.6) > 0.0);
    }

    #[test]
    fn stationary_balance_residual_vanishes() {
        let grid = Grid::new(-4.0, 4.0, 201).unwrap();
        let obj = Objective::double_well(0.1);
        let op = FokkerPlanck::new(&obj, grid).unwrap();
        let fq = gibbs_from_costs(op.costs(), 0.6, &grid).unwrap();
        let run = CoupledRun {
            m0: 0.6,
            t_max: 3e-4,
            dt: 1e-4,
            control: ControlLaw::Zero,
            snapshot_every: 0,
        };
        let traj = evolve_coupled(&fq, &obj, &CoolingParams::default(), &run).unwrap();
        let r = entropy_balance_residual(&traj.records[0..3]).unwrap();
        assert!(r <= 1e-10, "{r}");
        assert!(entropy_balance_residual(&traj.records[0..2]).is_err());
    }

    #[test]
    fn zero_control_keeps_temperature() {
        let grid = Grid::new(-4.0, 4.0, 161).unwrap();
        let obj = Objective::double_well(0.1);
        let run = CoupledRun {
            m0: 0.5,
            t_max: 2.0,
            dt: 2e-4,
            control: ControlLaw::Zero,
            snapshot_every: 2000,
        };
        let traj = evolve_coupled(&gaussian(grid, 1.0, 0.3), &obj, &CoolingParams::default(), &run).unwrap();
        assert!(traj.records.iter().all(|r| r.m_k == 0.5));
        let hs: Vec<f64> = traj.records.iter().map(|r| r.h).collect();
        assert!(hs.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert_eq!(traj.snapshots.len(), 6);
    }

    #[test]
    fn coupled_requires_first_moment() {
        let grid = Grid::new(-4.0, 4.0, 41).unwrap();
        let mut params = CoolingParams::default();
        params.k = 2.0;
        let run = CoupledRun {
            m0: 1.0,
            t_max: 1.0,
            dt: 1e-3,
            control: ControlLaw::Feedback,
            snapshot_every: 0,
        };
        assert!(evolve_coupled(&gaussian(grid, 0.0, 1.0), &Objective::double_well(0.1), &params, &run).is_err());
    }

    fn ou_residual(dt: f64) -> f64 {
        let grid = Grid::new(-8.0, 8.0, 501).unwrap();
        let obj = Objective::quadratic(0.0, 1.0);
        let run = CoupledRun {
            m0: 1.0,
            t_max: 0.2,
            dt,
            control: ControlLaw::Zero,
            snapshot_every: 0,
        };
        let traj = evolve_coupled(&gaussian(grid, 1.0, 0.5), &obj, &CoolingParams::default(), &run).unwrap();
        let mid = traj.records.iter().position(|r| r.t >= 0.1 - 1e-12).unwrap();
        entropy_balance_residual(&traj.records[mid - 1..=mid + 1]).unwrap()
    }

    #[test]
    fn ou_balance_residual_is_first_order() {
        let r1 = ou_residual(1e-4);
        let r2 = ou_residual(5e-5);
        assert!(r1 <= 1e-3, "{r1}");
        let ratio = r1 / r2;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio} ({r1}, {r2})");
    }
}
