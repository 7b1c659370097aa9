//! Temperature dynamics: the sampled transition for `k = 1`, the moment
//! ODE with its quasi-equilibrium closure for `k > 1`, the generalized
//! Gamma quasi-equilibrium and the entropy feedback control.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::ensemble::{draw_symmetric, moment_of, TemperatureSamples};
use crate::error::{Error, Result};

/// Parameters of the temperature dynamics and of the feedback law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoolingParams {
    /// Noise exponent, `0 < p < 1/2`.
    pub p: f64,
    /// Activation threshold of the temperature noise.
    pub theta: f64,
    /// Nominal noise variance.
    pub sigma2: f64,
    /// Order of the temperature moment driving the diffusion.
    pub k: f64,
    /// Temperature interaction frequency. Every sample is updated each step
    /// when `nu = 1`; a sample takes part with probability `1/nu` otherwise.
    pub nu: f64,
    /// Feedback gain.
    pub alpha: f64,
    /// Quasi-invariant scale; also the time step.
    pub epsilon: f64,
    /// Use the unscaled per-step temperature transition (`epsilon = 1` in
    /// the update) instead of the quasi-invariant one.
    pub literal_algorithm1: bool,
    /// Use `m_{k+2(1-p)} = m_k * Gamma ratio` without the scale prefactor.
    pub literal_closure: bool,
    /// Replace the activation threshold by `epsilon`.
    pub scaled_theta: bool,
}

impl Default for CoolingParams {
    fn default() -> Self {
        CoolingParams {
            p: 0.25,
            theta: 0.5,
            sigma2: 0.1,
            k: 1.0,
            nu: 1.0,
            alpha: 0.1,
            epsilon: 1e-3,
            literal_algorithm1: false,
            literal_closure: false,
            scaled_theta: false,
        }
    }
}

impl CoolingParams {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64, lo: f64, hi: f64| v > lo && v < hi;
        if !open(self.p, 0.0, 0.5) {
            return Err(Error::config("p", format!("{} outside (0, 1/2)", self.p)));
        }
        if !open(self.theta, 0.0, 1.0) {
            return Err(Error::config("theta", format!("{} outside (0, 1)", self.theta)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::config("sigma2", format!("{} must be >= 0", self.sigma2)));
        }
        if !(self.k.is_finite() && self.k >= 1.0) {
            return Err(Error::config("k", format!("{} must be >= 1", self.k)));
        }
        if !(self.nu.is_finite() && self.nu >= 1.0) {
            return Err(Error::config(
                "nu",
                format!("{} must be >= 1 when the time step equals epsilon", self.nu),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", format!("{} must be > 0", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config("epsilon", format!("{} outside (0, 1]", self.epsilon)));
        }
        Ok(())
    }

    /// Factor multiplying the control in one temperature step.
    pub fn control_scale(&self) -> f64 {
        if self.literal_algorithm1 {
            1.0
        } else {
            self.epsilon
        }
    }

    pub fn effective_theta(&self) -> f64 {
        if self.scaled_theta {
            self.epsilon
        } else {
            self.theta
        }
    }

    /// Temperature below which the noise is switched off.
    pub fn noise_threshold(&self) -> f64 {
        (1.0 - self.p) * self.effective_theta()
    }

    /// Half-width actually used for the noise: the positivity bound, capped
    /// so that the variance does not exceed `sigma2`.
    pub fn noise_half_width(&self, lambda: f64) -> Result<f64> {
        let bound = eta_half_width(lambda, self.p, self.effective_theta(), self.control_scale())?;
        Ok(bound.min((3.0 * self.sigma2).sqrt()))
    }
}

/// Positivity bound `(1 - eps*lambda) ((1-p) theta)^(1-p)` on the noise.
pub fn eta_half_width(lambda: f64, p: f64, theta: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::ControlRange(lambda));
    }
    Ok((1.0 - epsilon * lambda).max(0.0) * ((1.0 - p) * theta).powf(1.0 - p))
}

/// One temperature transition with fixed control, ready to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureKick {
    decay: f64,
    amplitude: f64,
    half_width: f64,
    threshold: f64,
    p: f64,
    participation: f64,
}

impl TemperatureKick {
    pub fn new(lambda: f64, params: &CoolingParams) -> Result<Self> {
        let half_width = params.noise_half_width(lambda)?;
        let scale = params.control_scale();
        Ok(TemperatureKick {
            decay: 1.0 - scale * lambda,
            amplitude: scale.sqrt(),
            half_width,
            threshold: params.noise_threshold(),
            p: params.p,
            participation: 1.0 / params.nu,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Variance of the noise actually drawn.
    pub fn noise_variance(&self) -> f64 {
        self.half_width * self.half_width / 3.0
    }

    /// New value of one sample given its noise draw `eta`.
    #[inline]
    pub(crate) fn kick_one<R: Rng>(&self, t: f64, eta: f64, rng: &mut R) -> f64 {
        if self.participation < 1.0 && rng.random::<f64>() >= self.participation {
            return t;
        }
        // the bound makes this nonnegative up to rounding
        self.unclamped(t, eta).max(0.0)
    }

    /// The update before the rounding guard, with participation forced.
    #[inline]
    pub(crate) fn unclamped(&self, t: f64, eta: f64) -> f64 {
        let noise = if t >= self.threshold {
            self.amplitude * t.powf(self.p) * eta
        } else {
            0.0
        };
        self.decay * t + noise
    }

    /// Updates every sample in place, drawing from `rng` in index order.
    pub(crate) fn apply<R: Rng>(&self, temps: &mut [f64], rng: &mut R) {
        for t in temps {
            let eta = draw_symmetric(rng, self.half_width);
            *t = self.kick_one(*t, eta, rng);
        }
    }
}

/// `T' = (1 - eps lambda) T + sqrt(eps) T^p chi(T >= (1-p) theta) eta` for
/// every sample. Returns the noise half-width used.
pub fn update_temperatures<R: Rng>(
    temps: &mut TemperatureSamples,
    lambda: f64,
    params: &CoolingParams,
    rng: &mut R,
) -> Result<f64> {
    let kick = TemperatureKick::new(lambda, params)?;
    kick.apply(temps.as_mut_slice(), rng);
    Ok(kick.half_width())
}

/// Which branch of the feedback law produced the control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Cost gap nonnegative: control proportional to the moment.
    Entropic,
    /// Cost gap negative: logarithmic cooling.
    Logarithmic,
}

/// Control value after clamping to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub lambda: f64,
    pub branch: Branch,
    pub clamped: bool,
}

impl Control {
    fn clamp(raw: f64, branch: Branch) -> Control {
        let lambda = raw.clamp(0.0, 1.0);
        if lambda != raw {
            log::warn!("feedback control {raw} clamped to {lambda}");
        }
        Control {
            lambda,
            branch,
            clamped: lambda != raw,
        }
    }
}

/// `1 / ((t + 2) log(t + 2))`, the rate giving `m(t) = T0 / log(t + 2)`.
pub fn log_cooling_rate(t: f64) -> f64 {
    let s = t + 2.0;
    1.0 / (s * s.ln())
}

/// `T0 / log(t + 2)`.
pub fn log_schedule(t0: f64, t: f64) -> f64 {
    t0 / (t + 2.0).ln()
}

fn check_feedback_inputs(m: f64, h0: f64, sup_f: f64) -> Result<()> {
    if !(sup_f > 0.0) {
        return Err(Error::InvalidObjective);
    }
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::invalid(format!("moment {m} must be finite and >= 0")));
    }
    if !(h0.is_finite() && h0 >= 0.0) {
        return Err(Error::invalid(format!("initial entropy {h0} must be finite and >= 0")));
    }
    Ok(())
}

/// Feedback control for `k = 1`.
pub fn lambda_k1(m1: f64, h0: f64, sup_f: f64, alpha: f64, t: f64, cost_gap: f64) -> Result<Control> {
    check_feedback_inputs(m1, h0, sup_f)?;
    Ok(if cost_gap >= 0.0 {
        Control::clamp(
            alpha * m1 * h0.sqrt() / (std::f64::consts::SQRT_2 * sup_f),
            Branch::Entropic,
        )
    } else {
        Control::clamp(log_cooling_rate(t), Branch::Logarithmic)
    })
}

/// `Gamma((3 - 4p + k) / (2(1-p))) / Gamma((1 - 2p + k) / (2(1-p)))`.
pub fn closure_gamma_ratio(k: f64, p: f64) -> f64 {
    let l = 2.0 * (1.0 - p);
    (ln_gamma((3.0 - 4.0 * p + k) / l) - ln_gamma((1.0 - 2.0 * p + k) / l)).exp()
}

/// Feedback control for `k > 1`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_kgt1(
    mk: f64,
    h0: f64,
    sup_f: f64,
    alpha: f64,
    k: f64,
    p: f64,
    sigma2: f64,
    t: f64,
    cost_gap: f64,
) -> Result<Control> {
    check_feedback_inputs(mk, h0, sup_f)?;
    if !(k > 1.0) {
        return Err(Error::invalid(format!("moment order {k} must exceed 1")));
    }
    Ok(if cost_gap >= 0.0 {
        Control::clamp(
            alpha * mk * h0.sqrt() / (std::f64::consts::SQRT_2 * sup_f),
            Branch::Entropic,
        )
    } else {
        let floor = 0.5 * sigma2 * (k - 1.0) * closure_gamma_ratio(k, p);
        Control::clamp(floor + log_cooling_rate(t) / k, Branch::Logarithmic)
    })
}

/// Admissible feedback gains `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl AlphaBounds {
    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn contains(&self, alpha: f64) -> bool {
        alpha > self.lo && alpha <= self.hi
    }
}

/// Gain interval guaranteeing entropy decay. For `k > 1` the moments are
/// those of the quasi-equilibrium whose `k`-th moment equals `m_at_0`.
pub fn alpha_bounds(k: f64, p: f64, sigma2: f64, h0: f64, sup_f: f64, m_at_0: f64) -> Result<AlphaBounds> {
    if h0 == 0.0 {
        return Err(Error::DegenerateStart);
    }
    if !(h0.is_finite() && h0 > 0.0) {
        return Err(Error::invalid(format!("initial entropy {h0} must be > 0")));
    }
    if !(sup_f > 0.0) {
        return Err(Error::InvalidObjective);
    }
    if !(m_at_0 > 0.0) {
        return Err(Error::invalid(format!("initial moment {m_at_0} must be > 0")));
    }
    let hi = std::f64::consts::SQRT_2 * sup_f / (m_at_0 * h0.sqrt());
    if k <= 1.0 {
        return Ok(AlphaBounds { lo: 0.0, hi });
    }
    let l = 2.0 * (1.0 - p);
    let d = 1.0 - 2.0 * p;
    // invert the moment formula for the scale, then lift to order k + l
    let ln_scale = (l / k) * (m_at_0.ln() + ln_gamma(d / l) - ln_gamma((d + k) / l));
    let m_shift = m_at_0 * ln_scale.exp() * closure_gamma_ratio(k, p);
    let lo = sup_f * sigma2 * (k - 1.0) / h0.sqrt() * m_shift / (m_at_0 * m_at_0);
    Ok(AlphaBounds { lo, hi })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidControl(lambda));
    }
    Ok(())
}

/// Scale `sigma2 (1 - p) / lambda` of the quasi-equilibrium.
fn gamma_scale(lambda: f64, p: f64, sigma2: f64) -> f64 {
    sigma2 * (1.0 - p) / lambda
}

/// Normalized quasi-equilibrium density at `t > 0`.
pub fn gamma_pdf(t: f64, lambda: f64, p: f64, sigma2: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let l = 2.0 * (1.0 - p);
    let d = 1.0 - 2.0 * p;
    let s = gamma_scale(lambda, p, sigma2);
    let norm = l / (gamma(d / l) * s.powf(d / l));
    norm * (-t.powf(l) / s).exp() * t.powf(-2.0 * p)
}

/// Quasi-equilibrium moment of order `k`.
pub fn gamma_moment(lambda: f64, p: f64, sigma2: f64, k: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if k == 0.0 {
        return Ok(1.0);
    }
    let l = 2.0 * (1.0 - p);
    let d = 1.0 - 2.0 * p;
    let s = gamma_scale(lambda, p, sigma2);
    Ok(s.powf(k / l) * (ln_gamma((d + k) / l) - ln_gamma(d / l)).exp())
}

/// Positive temperature nodes with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TemperatureGrid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::invalid("temperature grid needs matching, nonempty nodes and weights"));
        }
        if nodes.iter().any(|t| !(*t > 0.0 && t.is_finite())) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("temperature nodes must be positive and increasing"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("quadrature weights must be nonnegative"));
        }
        Ok(TemperatureGrid { nodes, weights })
    }

    /// Nodes `t_max * u^beta` for `u` uniform on `(0, 1]`, with trapezoid
    /// weights in `u`. Large `beta` clusters nodes at `T = 0`, which absorbs
    /// the `T^(-2p)` singularity of the quasi-equilibrium.
    pub fn graded(t_max: f64, n: usize, beta: f64) -> Result<Self> {
        if n < 2 || !(t_max > 0.0) || !(beta >= 1.0) {
            return Err(Error::invalid("graded grid needs n >= 2, t_max > 0, beta >= 1"));
        }
        let h = 1.0 / n as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 1..=n {
            let u = i as f64 * h;
            let w = if i == n { 0.5 * h } else { h };
            nodes.push(t_max * u.powf(beta));
            weights.push(w * t_max * beta * u.powf(beta - 1.0));
        }
        TemperatureGrid::new(nodes, weights)
    }

    /// A grid resolving the quasi-equilibrium for `(lambda, p, sigma2)`
    /// and moments up to moderate order.
    pub fn for_quasi_equilibrium(lambda: f64, p: f64, sigma2: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(sigma2 > 0.0) {
            return Err(Error::invalid("quasi-equilibrium needs sigma2 > 0"));
        }
        let l = 2.0 * (1.0 - p);
        let t_max = (80.0 * gamma_scale(lambda, p, sigma2)).powf(1.0 / l);
        let beta = (4.0 / (1.0 - 2.0 * p)).max(4.0);
        TemperatureGrid::graded(t_max, 20_000, beta)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Density tabulated on a [`TemperatureGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureDensity {
    grid: TemperatureGrid,
    values: Vec<f64>,
}

impl TemperatureDensity {
    pub fn grid(&self) -> &TemperatureGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn moment(&self, k: f64) -> f64 {
        let v: Vec<f64> = self
            .grid
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(t, g)| t.powf(k) * g)
            .collect();
        self.grid.integrate(&v)
    }
}

/// Quasi-equilibrium temperature density tabulated on `grid` and
/// renormalized by the grid quadrature.
pub fn gamma_quasi_equilibrium(lambda: f64, p: f64, sigma2: f64, grid: &TemperatureGrid) -> Result<TemperatureDensity> {
    check_lambda(lambda)?;
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::config("p", format!("{p} outside (0, 1/2)")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("quasi-equilibrium needs sigma2 > 0"));
    }
    let mut values: Vec<f64> = grid.nodes.iter().map(|&t| gamma_pdf(t, lambda, p, sigma2)).collect();
    let mass = grid.integrate(&values);
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(TemperatureDensity {
        grid: grid.clone(),
        values,
    })
}

/// `m_{k + 2(1-p)}` in terms of `m_k` at the quasi-equilibrium for `lambda`.
pub fn closure_moment(mk: f64, lambda: f64, params: &CoolingParams) -> Result<f64> {
    let ratio = closure_gamma_ratio(params.k, params.p);
    if params.literal_closure {
        return Ok(mk * ratio);
    }
    check_lambda(lambda)?;
    Ok(mk * gamma_scale(lambda, params.p, params.sigma2) * ratio)
}

/// One forward-Euler step of
/// `dm_k/dt = -k lambda m_k + k(k-1) sigma2/2 m_{k+2(1-p)}`, clamped at 0.
pub fn moment_ode_step(mk: f64, lambda: f64, dt: f64, params: &CoolingParams) -> Result<f64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep(dt));
    }
    let k = params.k;
    let source_coeff = 0.5 * k * (k - 1.0) * params.sigma2;
    let source = if source_coeff == 0.0 {
        0.0
    } else {
        source_coeff * closure_moment(mk, lambda, params)?
    };
    Ok((mk + dt * (-k * lambda * mk + source)).max(0.0))
}

/// How the temperature is represented.
#[derive(Debug, Clone, PartialEq)]
pub enum TemperatureState {
    /// One temperature per particle (`k = 1`).
    Sampled(TemperatureSamples),
    /// Only the moment `m_k` is tracked (`k > 1`).
    QuasiEquilibrium,
}

/// Temperature state plus the feedback bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CoolingState {
    pub temperature: TemperatureState,
    pub m_k: f64,
    pub lambda: f64,
    pub h0: f64,
    pub sup_f: f64,
    pub t: f64,
    pub clamps: u64,
}

impl CoolingState {
    pub fn sampled(temps: TemperatureSamples, h0: f64, sup_f: f64) -> Self {
        let m_k = moment_of(temps.as_slice(), 1.0);
        CoolingState {
            temperature: TemperatureState::Sampled(temps),
            m_k,
            lambda: 0.0,
            h0,
            sup_f,
            t: 0.0,
            clamps: 0,
        }
    }

    pub fn quasi_equilibrium(m_k: f64, h0: f64, sup_f: f64) -> Self {
        CoolingState {
            temperature: TemperatureState::QuasiEquilibrium,
            m_k,
            lambda: 0.0,
            h0,
            sup_f,
            t: 0.0,
            clamps: 0,
        }
    }

    pub fn samples(&self) -> Option<&TemperatureSamples> {
        match &self.temperature {
            TemperatureState::Sampled(s) => Some(s),
            TemperatureState::QuasiEquilibrium => None,
        }
    }

    pub(crate) fn record_control(&mut self, control: Control) {
        self.lambda = control.lambda;
        if control.clamped {
            self.clamps += 1;
        }
    }
}

/// Advances a quasi-equilibrium state by one Euler step of the moment ODE.
pub fn advance_moment_ode(state: &mut CoolingState, params: &CoolingParams, lambda: f64, dt: f64) -> Result<()> {
    if state.temperature != TemperatureState::QuasiEquilibrium {
        return Err(Error::invalid("moment ODE applies to the quasi-equilibrium mode"));
    }
    state.m_k = moment_ode_step(state.m_k, lambda, dt, params)?;
    state.lambda = lambda;
    state.t += dt;
    Ok(())
}
