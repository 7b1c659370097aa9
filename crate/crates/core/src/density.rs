//! Densities on the uniform reconstruction grid and the functionals that
//! drive the feedback control: relative entropy, cost gap and L1 distance.
//!
//! Every integral uses the trapezoidal rule of [`Grid::trapezoid`], so the
//! Gibbs normalization, the entropy and the cost gap are mutually
//! consistent.

use std::io::Write;

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::fmt_f64;
use crate::objective::Objective;

/// Nodes where `f` falls below this contribute `0 log 0 = 0`.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Largest admissible fraction of particles outside the grid.
pub const MAX_SPILL_FRACTION: f64 = 0.01;

/// Nonnegative nodal density with unit trapezoidal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes nonnegative nodal values to unit mass.
    pub fn from_values(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("density values must be finite and nonnegative"));
        }
        let mass = grid.trapezoid(&values);
        if mass <= 0.0 {
            return Err(Error::invalid("density has zero mass on the grid"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(GridDensity { grid, values })
    }

    /// Wraps values that are already normalized (used by the PDE stepper,
    /// which conserves mass itself).
    pub(crate) fn from_normalized(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridDensity { grid, values }
    }

    /// Tabulates a density given pointwise, then normalizes.
    pub fn tabulate(grid: Grid, pdf: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(pdf).collect();
        GridDensity::from_values(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    pub fn mean(&self) -> f64 {
        let xv: Vec<f64> = self
            .grid
            .nodes()
            .zip(&self.values)
            .map(|(x, v)| x * v)
            .collect();
        self.grid.trapezoid(&xv)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xv: Vec<f64> = self
            .grid
            .nodes()
            .zip(&self.values)
            .map(|(x, v)| (x - m) * (x - m) * v)
            .collect();
        self.grid.trapezoid(&xv)
    }

    /// Two-column `x,value` CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,value")?;
        for (x, v) in self.grid.nodes().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(x), fmt_f64(*v))?;
        }
        Ok(())
    }

    fn check_same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

/// Outcome of binning an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramStats {
    pub total: usize,
    pub spilled: usize,
}

impl HistogramStats {
    pub fn spill_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.spilled as f64 / self.total as f64
        }
    }

    /// Fails when more than 1% of the particles were clipped.
    pub fn check_reliable(&self) -> Result<()> {
        let spill_fraction = self.spill_fraction();
        if spill_fraction > MAX_SPILL_FRACTION {
            return Err(Error::UnreliableDiagnostics { spill_fraction });
        }
        Ok(())
    }
}

/// Raw bin values `count / (N h)` on node-centred cells; particles outside
/// the grid are clipped into the boundary cells and counted as spill.
pub fn histogram_values(xs: &[f64], grid: &Grid) -> (Vec<f64>, HistogramStats) {
    let mut counts = vec![0u64; grid.len()];
    let mut spilled = 0usize;
    for &x in xs {
        if !grid.contains(x) {
            spilled += 1;
        }
        counts[grid.cell_index(x)] += 1;
    }
    let scale = 1.0 / (xs.len() as f64 * grid.spacing());
    let values = counts.iter().map(|&c| c as f64 * scale).collect();
    (
        values,
        HistogramStats {
            total: xs.len(),
            spilled,
        },
    )
}

pub(crate) fn density_from_positions(xs: &[f64], grid: &Grid) -> Result<(GridDensity, HistogramStats)> {
    if xs.is_empty() {
        return Err(Error::invalid("cannot reconstruct a density from no particles"));
    }
    let (values, stats) = histogram_values(xs, grid);
    Ok((GridDensity::from_values(*grid, values)?, stats))
}

/// Histogram reconstruction of a one-dimensional ensemble, renormalized to
/// unit trapezoidal mass.
pub fn reconstruct_histogram(ens: &ParticleEnsemble, grid: &Grid) -> Result<(GridDensity, HistogramStats)> {
    if ens.dim() != 1 {
        return Err(Error::invalid("density reconstruction is one-dimensional"));
    }
    density_from_positions(ens.positions(), grid)
}

/// Gibbs density `exp(-F/D)` normalized on the grid. The exponent is shifted
/// by the grid minimum of `F`, which cancels in the normalization.
pub fn gibbs_density(obj: &Objective, temperature: f64, grid: &Grid) -> Result<GridDensity> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidTemperature(temperature));
    }
    let costs: Vec<f64> = grid.nodes().map(|x| obj.cost1(x)).collect();
    gibbs_from_costs(&costs, temperature, grid)
}

pub(crate) fn gibbs_from_costs(costs: &[f64], temperature: f64, grid: &Grid) -> Result<GridDensity> {
    let fmin = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let values = costs
        .iter()
        .map(|f| (-(f - fmin) / temperature).exp())
        .collect();
    GridDensity::from_values(*grid, values)
}

/// `H(f|h) = ∫ f log(f/h)`. Returns `+inf` when `h` vanishes where `f` does not.
pub fn relative_entropy(f: &GridDensity, h: &GridDensity) -> Result<f64> {
    f.check_same_grid(h)?;
    let mut integrand = Vec::with_capacity(f.values.len());
    for (&fi, &hi) in f.values.iter().zip(&h.values) {
        if fi < ENTROPY_FLOOR {
            integrand.push(0.0);
        } else if hi <= 0.0 {
            return Ok(f64::INFINITY);
        } else {
            integrand.push(fi * (fi / hi).ln());
        }
    }
    Ok(f.grid.trapezoid(&integrand))
}

/// Cost gap `∫ F (fq - f)`.
pub fn cost_gap(obj: &Objective, f: &GridDensity, fq: &GridDensity) -> Result<f64> {
    f.check_same_grid(fq)?;
    let integrand: Vec<f64> = f
        .grid
        .nodes()
        .zip(f.values.iter().zip(&fq.values))
        .map(|(x, (a, b))| obj.cost1(x) * (b - a))
        .collect();
    Ok(f.grid.trapezoid(&integrand))
}

pub(crate) fn cost_gap_from_costs(costs: &[f64], f: &GridDensity, fq: &GridDensity) -> f64 {
    let integrand: Vec<f64> = costs
        .iter()
        .zip(f.values.iter().zip(&fq.values))
        .map(|(c, (a, b))| c * (b - a))
        .collect();
    f.grid.trapezoid(&integrand)
}

/// `∫ |f - h|`.
pub fn l1_distance(f: &GridDensity, h: &GridDensity) -> Result<f64> {
    f.check_same_grid(h)?;
    let integrand: Vec<f64> = f
        .values
        .iter()
        .zip(&h.values)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(f.grid.trapezoid(&integrand))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{init_particles, InitialDistribution, RunSeed};

    fn indicator(grid: Grid, lo: f64, hi: f64) -> GridDensity {
        GridDensity::tabulate(grid, |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn point_mass_histogram() {
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        let (raw, stats) = histogram_values(&[0.5, 0.52, 0.49], &g);
        let h = g.spacing();
        for (i, v) in raw.iter().enumerate() {
            if i == 5 {
                assert!((v - 1.0 / h).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert_eq!(stats.spilled, 0);
        // an interior spike already has unit trapezoidal mass
        let (d, _) = density_from_positions(&[0.5], &g).unwrap();
        assert!((d.values()[5] - 1.0 / h).abs() < 1e-12);
    }

    #[test]
    fn spill_is_counted_and_clipped() {
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        let xs = [-3.0, 0.5, 0.5, 9.0];
        let (d, stats) = density_from_positions(&xs, &g).unwrap();
        assert_eq!(stats.spilled, 2);
        assert_eq!(stats.spill_fraction(), 0.5);
        assert!(d.values()[0] > 0.0 && d.values()[10] > 0.0);
        assert!(matches!(
            stats.check_reliable(),
            Err(Error::UnreliableDiagnostics { .. })
        ));
    }

    #[test]
    fn histogram_of_uniform() {
        let g = Grid::diagnostics_default();
        let ens = init_particles(
            &InitialDistribution::Uniform { lo: 1.0, hi: 2.0 },
            1_000_000,
            1,
            RunSeed(99),
        )
        .unwrap();
        let (d, stats) = reconstruct_histogram(&ens, &g).unwrap();
        assert_eq!(stats.spilled, 0);
        for (x, v) in g.nodes().zip(d.values()) {
            // cells straddling the edges of [1, 2] are half filled
            if x > 1.0 + g.spacing() && x < 2.0 - g.spacing() {
                assert!((v - 1.0).abs() <= 0.05, "x={x} v={v}");
            } else if x < 1.0 - g.spacing() || x > 2.0 + g.spacing() {
                assert_eq!(*v, 0.0);
            }
        }
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_rejects_short_grid() {
        assert!(matches!(Grid::new(-20.0, 20.0, 1), Err(Error::Config { .. })));
    }

    #[test]
    fn gibbs_of_constant_is_uniform() {
        let g = Grid::new(-2.0, 3.0, 101).unwrap();
        let c = Objective::from_fn("c", |_| 4.0, None, (-2.0, 3.0));
        let d = gibbs_density(&c, 0.7, &g).unwrap();
        assert!(d.values().iter().all(|v| (v - 0.2).abs() < 1e-14));
    }

    #[test]
    fn gibbs_of_quadratic_is_gaussian() {
        let g = Grid::diagnostics_default();
        let d = gibbs_density(&Objective::quadratic(0.0, 1.0), 1.0, &g).unwrap();
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        for (x, v) in g.nodes().zip(d.values()) {
            let exact = norm * (-0.5 * x * x).exp();
            assert!((v - exact).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn gibbs_hot_limit_is_flat() {
        let g = Grid::diagnostics_default();
        let d = gibbs_density(&Objective::benchmark(), 1e6, &g).unwrap();
        let flat = 1.0 / 40.0;
        let dev = d.values().iter().map(|v| (v - flat).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-4, "dev {dev}");
    }

    #[test]
    fn gibbs_rejects_nonpositive_temperature() {
        let g = Grid::diagnostics_default();
        let obj = Objective::benchmark();
        assert!(matches!(gibbs_density(&obj, 0.0, &g), Err(Error::InvalidTemperature(_))));
        assert!(gibbs_density(&obj, -1.0, &g).is_err());
    }

    #[test]
    fn entropy_examples() {
        let g = Grid::new(0.0, 2.0, 20_001).unwrap();
        let f = indicator(g, 0.0, 1.0);
        let h = indicator(g, 0.0, 2.0);
        assert_eq!(relative_entropy(&h, &h).unwrap(), 0.0);
        let kl = relative_entropy(&f, &h).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-3, "kl {kl}");
        // support mismatch diverges
        assert_eq!(relative_entropy(&h, &f).unwrap(), f64::INFINITY);
    }

    #[test]
    fn entropy_rejects_grid_mismatch() {
        let a = indicator(Grid::new(0.0, 1.0, 11).unwrap(), 0.0, 1.0);
        let b = indicator(Grid::new(0.0, 1.0, 12).unwrap(), 0.0, 1.0);
        assert!(matches!(relative_entropy(&a, &b), Err(Error::GridMismatch(_))));
        assert!(l1_distance(&a, &b).is_err());
        let obj = Objective::benchmark();
        assert!(cost_gap(&obj, &a, &b).is_err());
    }

    #[test]
    fn cost_gap_examples() {
        let g = Grid::diagnostics_default();
        let obj = Objective::benchmark();
        let fq = gibbs_density(&obj, 2.0, &g).unwrap();
        assert_eq!(cost_gap(&obj, &fq, &fq).unwrap(), 0.0);

        let c = Objective::from_fn("c", |_| 3.0, None, (-20.0, 20.0));
        let f = indicator(g, 1.0, 2.0);
        assert!(cost_gap(&c, &f, &fq).unwrap().abs() < 1e-12);

        let ens = init_particles(&InitialDistribution::default(), 100_000, 1, RunSeed(4)).unwrap();
        let (fh, _) = reconstruct_histogram(&ens, &g).unwrap();
        let gap = cost_gap(&obj, &fh, &fq).unwrap();
        // direct quadrature oracle: E_fq[F] - E_f[F] summed node by node
        let mut oracle = 0.0;
        for (i, x) in g.nodes().enumerate() {
            oracle += g.weight(i) * obj.cost1(x) * (fq.values()[i] - fh.values()[i]);
        }
        assert!((gap - oracle).abs() < 1e-12);
        assert!(gap > 0.0, "gap {gap}");
    }

    #[test]
    fn l1_examples() {
        let g = Grid::new(0.0, 4.0, 401).unwrap();
        let a = indicator(g, 0.0, 1.0);
        let b = indicator(g, 2.0, 3.0);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert!((l1_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_all_nodes() {
        let g = Grid::new(0.0, 1.0, 5).unwrap();
        let d = indicator(g, 0.0, 1.0);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("x,value\n"));
    }
}
