//! Cost functions, their sup-norm over the working grid, minimizer location
//! and the analytic drift used by the mean-field solver.
//!
//! Multi-dimensional positions are handled separably: the cost of a point in
//! `R^d` is the sum of the one-dimensional profile over its coordinates.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Linear interpolation table, constant extrapolation outside its range.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl Table {
    pub fn new(xs: Vec<f64>, fs: Vec<f64>) -> Result<Self> {
        if xs.len() != fs.len() || xs.len() < 2 {
            return Err(Error::invalid(
                "tabulated objective needs at least two (x, F) pairs",
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("tabulated x values must be strictly increasing"));
        }
        if xs.iter().chain(&fs).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tabulated objective contains non-finite values"));
        }
        Ok(Table { xs, fs })
    }

    /// Reads a two-column `x,F(x)` CSV. A non-numeric first line is treated
    /// as a header; `#` starts a comment line.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let parsed = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some((x, f)) => {
                    xs.push(x);
                    fs.push(f);
                }
                None if xs.is_empty() && lineno == 0 => continue,
                None => {
                    return Err(Error::invalid(format!(
                        "{}: line {} is not an `x,F(x)` pair",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Table::new(xs, fs)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.fs[0];
        }
        if x >= self.xs[n - 1] {
            return self.fs[n - 1];
        }
        let j = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let (f0, f1) = (self.fs[j - 1], self.fs[j]);
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    }
}

#[derive(Clone)]
pub enum Profile {
    /// `cosh(x/4) + 3` off the well, `cosh(x/4) - cosh(x) + 3` on the closed
    /// well `[0, 2]`.
    BenchmarkCosh,
    /// `curvature/2 * (x - center)^2`.
    Quadratic { center: f64, curvature: f64 },
    /// `(x^2 - 1)^2 / 4 + tilt * x`.
    DoubleWell { tilt: f64 },
    /// `cosh(x / scale)`.
    Cosh { scale: f64 },
    Tabulated(Table),
    Custom {
        value: ScalarFn,
        drift: Option<ScalarFn>,
    },
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::BenchmarkCosh => write!(f, "BenchmarkCosh"),
            Profile::Quadratic { center, curvature } => f
                .debug_struct("Quadratic")
                .field("center", center)
                .field("curvature", curvature)
                .finish(),
            Profile::DoubleWell { tilt } => f.debug_struct("DoubleWell").field("tilt", tilt).finish(),
            Profile::Cosh { scale } => f.debug_struct("Cosh").field("scale", scale).finish(),
            Profile::Tabulated(t) => write!(f, "Tabulated({} points)", t.xs.len()),
            Profile::Custom { drift, .. } => write!(f, "Custom(smooth: {})", drift.is_some()),
        }
    }
}

/// Names accepted by [`Objective::by_name`].
pub const REGISTERED: &[&str] = &["benchmark-cosh", "quadratic", "double-well", "cosh"];

/// A cost function together with its evaluation box and cached sup-norm.
/// Immutable once built, so it can be shared freely between workers.
#[derive(Debug, Clone)]
pub struct Objective {
    name: String,
    profile: Profile,
    domain: (f64, f64),
    sup_norm: Option<f64>,
}

impl Objective {
    pub fn new(name: impl Into<String>, profile: Profile, domain: (f64, f64)) -> Self {
        Objective {
            name: name.into(),
            profile,
            domain,
            sup_norm: None,
        }
    }

    pub fn benchmark() -> Self {
        Objective::new("benchmark-cosh", Profile::BenchmarkCosh, (-20.0, 20.0))
    }

    pub fn quadratic(center: f64, curvature: f64) -> Self {
        Objective::new(
            "quadratic",
            Profile::Quadratic { center, curvature },
            (-20.0, 20.0),
        )
    }

    pub fn double_well(tilt: f64) -> Self {
        Objective::new("double-well", Profile::DoubleWell { tilt }, (-4.0, 4.0))
    }

    pub fn from_fn(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        drift: Option<ScalarFn>,
        domain: (f64, f64),
    ) -> Self {
        Objective::new(
            name,
            Profile::Custom {
                value: Arc::new(value),
                drift,
            },
            domain,
        )
    }

    pub fn tabulated(table: Table) -> Self {
        let domain = table.domain();
        Objective::new("tabulated", Profile::Tabulated(table), domain)
    }

    /// Looks up a registered objective. Tabulated objectives are built from
    /// a file instead, see [`Table::from_csv`].
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "benchmark-cosh" => Ok(Objective::benchmark()),
            "quadratic" => Ok(Objective::quadratic(0.0, 1.0)),
            "double-well" => Ok(Objective::double_well(0.1)),
            "cosh" => Ok(Objective::new(
                "cosh",
                Profile::Cosh { scale: 4.0 },
                (-20.0, 20.0),
            )),
            other => Err(Error::config(
                "objective",
                format!("unknown objective `{other}` (known: {})", REGISTERED.join(", ")),
            )),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Whether an analytic drift is available everywhere.
    pub fn is_smooth(&self) -> bool {
        match &self.profile {
            Profile::BenchmarkCosh | Profile::Tabulated(_) => false,
            Profile::Quadratic { .. } | Profile::DoubleWell { .. } | Profile::Cosh { .. } => true,
            Profile::Custom { drift, .. } => drift.is_some(),
        }
    }

    /// One-dimensional cost profile. Unchecked; used in the hot loops.
    #[inline]
    pub fn cost1(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::BenchmarkCosh => {
                if (0.0..=2.0).contains(&x) {
                    (x / 4.0).cosh() - x.cosh() + 3.0
                } else {
                    (x / 4.0).cosh() + 3.0
                }
            }
            Profile::Quadratic { center, curvature } => {
                let d = x - center;
                0.5 * curvature * d * d
            }
            Profile::DoubleWell { tilt } => {
                let s = x * x - 1.0;
                0.25 * s * s + tilt * x
            }
            Profile::Cosh { scale } => (x / scale).cosh(),
            Profile::Tabulated(t) => t.eval(x),
            Profile::Custom { value, .. } => value(x),
        }
    }

    #[inline]
    pub(crate) fn cost(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| self.cost1(xi)).sum()
    }

    /// Cost at a position in `R^d`.
    pub fn eval_cost(&self, x: &[f64]) -> Result<f64> {
        if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("position {x:?} is not finite")));
        }
        let value = self.cost(x);
        if !value.is_finite() {
            return Err(Error::invalid(format!(
                "objective `{}` is not finite at {x:?}",
                self.name
            )));
        }
        Ok(value)
    }

    fn drift1(&self, x: f64) -> Option<f64> {
        match &self.profile {
            Profile::BenchmarkCosh | Profile::Tabulated(_) => None,
            Profile::Quadratic { center, curvature } => Some(curvature * (x - center)),
            Profile::DoubleWell { tilt } => Some(x * x * x - x + tilt),
            Profile::Cosh { scale } => Some((x / scale).sinh() / scale),
            Profile::Custom { drift, .. } => drift.as_ref().map(|d| d(x)),
        }
    }

    /// Analytic gradient at `x`.
    pub fn eval_drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.is_smooth() {
            return Err(Error::UnsupportedObjective(format!(
                "`{}` has no analytic drift",
                self.name
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("position {x:?} is not finite")));
        }
        Ok(x.iter().map(|&xi| self.drift1(xi).unwrap_or(f64::NAN)).collect())
    }

    /// `max |F|` over the given nodes.
    pub fn sup_norm_on_nodes(&self, nodes: &[f64]) -> Result<f64> {
        if nodes.is_empty() {
            return Err(Error::invalid("sup-norm over an empty grid"));
        }
        Ok(nodes
            .iter()
            .map(|&x| self.cost1(x).abs())
            .fold(0.0, f64::max))
    }

    pub fn sup_norm_on_grid(&self, grid: &Grid) -> Result<f64> {
        let nodes: Vec<f64> = grid.nodes().collect();
        self.sup_norm_on_nodes(&nodes)
    }

    /// Computes the grid sup-norm and stores it on the objective.
    pub fn cache_sup_norm(&mut self, grid: &Grid) -> Result<f64> {
        let s = self.sup_norm_on_grid(grid)?;
        self.sup_norm = Some(s);
        Ok(s)
    }

    pub fn sup_norm(&self) -> Option<f64> {
        self.sup_norm
    }

    /// Global minimizer of the 1D profile: a scan over the grid nodes, then
    /// successive decimal zooms around the incumbent until the step drops
    /// below `refine_tol`. Ties go to the smaller abscissa.
    pub fn locate_minimizer(&self, grid: &Grid, refine_tol: f64) -> f64 {
        let mut best_x = grid.lo();
        let mut best_f = f64::INFINITY;
        for x in grid.nodes() {
            let f = self.cost1(x);
            if f < best_f {
                best_f = f;
                best_x = x;
            }
        }
        let mut step = grid.spacing();
        let tol = if refine_tol > 0.0 { refine_tol } else { step };
        while step > tol {
            step /= 10.0;
            let centre = best_x;
            for j in -10i32..=10 {
                let x = if j == 0 { centre } else { centre + f64::from(j) * step };
                if !grid.contains(x) {
                    continue;
                }
                let f = self.cost1(x);
                if f < best_f || (f == best_f && x < best_x) {
                    best_f = f;
                    best_x = x;
                }
            }
        }
        best_x
    }
}
