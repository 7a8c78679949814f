use std::collections::BTreeMap;

use darkstate_core::dynamics::{default_average_window, quasi_steady_fluorescence, LindbladGenerator, StepControl};
use darkstate_core::model::{MagneticField, SystemConfig};
use darkstate_core::nuclear::{sample_oh, uniform_spacing, wander_convolve, EnsembleEstimate, Grid2, OhEnsembleSpec};

use super::{absorption_linewidth, batch_ranges, batch_standard_error, stationary_fluorescence};
use crate::error::SimError;
use crate::exec::Executor;
use crate::result::{Column, ExperimentResult, Table};

/// How each map cell's time-averaged fluorescence is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum CptMethod {
    /// Harmonic expansion of the periodic steady state (exact time average).
    #[default]
    Periodic,
    /// RK4 settling from the mixed ground state followed by a windowed
    /// time average; `window_us = None` picks five beat periods (≥ 0.05 µs).
    QuasiSteady { settle_us: f64, window_us: Option<f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CellSelection {
    #[default]
    Full,
    /// Only the cells on the `Δ₁ + Δ₂ = 0` linecut. Ignored when spectral
    /// wandering is on, since the convolution reaches off-diagonal cells.
    Antidiagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CptSettings {
    /// Laser-1 detunings, MHz.
    pub grid1: Vec<f64>,
    /// Laser-2 detunings, MHz.
    pub grid2: Vec<f64>,
    pub method: CptMethod,
    pub cells: CellSelection,
    pub step: StepControl,
}

/// Raw per-sample kernel values of a (possibly partial) map.
#[derive(Clone, Debug, PartialEq)]
pub struct CptMapData {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub n_samples: usize,
    /// Computed cells `(i, j)` in evaluation order.
    pub cells: Vec<(usize, usize)>,
    /// `values[c][s]`: fluorescence (MHz) of cell `c` for sample `s`.
    pub values: Vec<Vec<f64>>,
    pub wander_sigma: f64,
}

/// Index of the grid node nearest to `x`, if within half a spacing.
fn nearest(axis: &[f64], x: f64) -> Option<usize> {
    let h = uniform_spacing(axis).ok()?;
    let (k, d) = axis
        .iter()
        .enumerate()
        .map(|(k, a)| (k, (a - x).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let tol = if h > 0.0 { 0.5 * h * (1.0 + 1e-9) } else { 1e-9 * x.abs().max(1.0) };
    (d <= tol).then_some(k)
}

fn antidiagonal_pairs(axis1: &[f64], axis2: &[f64]) -> Vec<(usize, usize)> {
    axis1.iter().enumerate().filter_map(|(i, &d1)| nearest(axis2, -d1).map(|j| (i, j))).collect()
}

fn check_grid(axis: &[f64], name: &str) -> Result<(), SimError> {
    if axis.is_empty() {
        return Err(SimError::Input(format!("{name} is empty")));
    }
    uniform_spacing(axis).map_err(|_| SimError::Input(format!("{name} must be increasing and uniform")))?;
    Ok(())
}

fn cell_kernel(cfg: &SystemConfig, oh: &MagneticField, method: CptMethod, step: StepControl) -> Result<f64, SimError> {
    if cfg.lasers.iter().all(|l| l.rabi == 0.0) {
        return Ok(0.0);
    }
    let gen = LindbladGenerator::for_system(cfg, oh)?;
    match method {
        CptMethod::Periodic => stationary_fluorescence(&gen, step),
        CptMethod::QuasiSteady { settle_us, window_us } => {
            let window = window_us.unwrap_or_else(|| default_average_window(&gen));
            Ok(quasi_steady_fluorescence(&gen, settle_us, window, step)?.fluorescence)
        }
    }
}

/// Evaluates the ensemble of kernel values over the selected cells.
pub fn compute_cpt_map(
    cfg: &SystemConfig,
    spec: &OhEnsembleSpec,
    settings: &CptSettings,
    exec: &Executor,
) -> Result<CptMapData, SimError> {
    cfg.validate()?;
    spec.validate()?;
    if cfg.lasers.len() != 2 {
        return Err(SimError::Input("the CPT map needs two lasers".into()));
    }
    check_grid(&settings.grid1, "grid1")?;
    check_grid(&settings.grid2, "grid2")?;
    let wander_sigma = cfg.qd.spectral_wander_sigma;
    let cells = match settings.cells {
        CellSelection::Antidiagonal if wander_sigma == 0.0 => {
            let pairs = antidiagonal_pairs(&settings.grid1, &settings.grid2);
            if pairs.is_empty() {
                return Err(SimError::Input("grids do not cover the antidiagonal".into()));
            }
            pairs
        }
        _ => (0..settings.grid1.len()).flat_map(|i| (0..settings.grid2.len()).map(move |j| (i, j))).collect(),
    };
    let ns = spec.n_samples;
    let flat = exec.map(cells.len() * ns, |k| {
        let (i, j) = cells[k / ns];
        let mut cfg = cfg.clone();
        cfg.lasers[0].detuning = settings.grid1[i];
        cfg.lasers[1].detuning = settings.grid2[j];
        cell_kernel(&cfg, &sample_oh(spec, k % ns), settings.method, settings.step)
    })?;
    let values = flat.chunks(ns).map(<[f64]>::to_vec).collect();
    Ok(CptMapData {
        axis1: settings.grid1.clone(),
        axis2: settings.grid2.clone(),
        n_samples: ns,
        cells,
        values,
        wander_sigma,
    })
}

impl CptMapData {
    pub fn kernel_evaluations(&self) -> usize {
        self.cells.len() * self.n_samples
    }

    fn is_full(&self) -> bool {
        self.cells.len() == self.axis1.len() * self.axis2.len()
    }

    /// Cell means over a sample range, as a grid (missing cells are NaN).
    fn grid_over(&self, samples: std::ops::Range<usize>) -> Grid2 {
        let n2 = self.axis2.len();
        let mut g = vec![f64::NAN; self.axis1.len() * n2];
        let m = samples.len() as f64;
        for (&(i, j), v) in self.cells.iter().zip(&self.values) {
            g[i * n2 + j] = v[samples.clone()].iter().sum::<f64>() / m;
        }
        Grid2 { axis1: self.axis1.clone(), axis2: self.axis2.clone(), values: g }
    }

    /// Mean map, optionally convolved with the spectral-wandering kernel.
    /// Returns the map and whether the kernel was wider than the grid allows.
    fn map_over(&self, samples: std::ops::Range<usize>) -> Result<(Grid2, bool), SimError> {
        let raw = self.grid_over(samples);
        if self.wander_sigma > 0.0 && self.is_full() {
            let c = wander_convolve(&raw, self.wander_sigma)?;
            Ok((c.map, c.wide_kernel))
        } else {
            Ok((raw, false))
        }
    }

    fn cell_estimates(&self) -> Result<Vec<EnsembleEstimate>, SimError> {
        self.values.iter().map(|v| EnsembleEstimate::from_values(v).map_err(SimError::from)).collect()
    }

    /// Visibility of the full ensemble and its batch standard error.
    pub fn visibility(&self, gamma_abs: f64) -> Result<(Linecut, f64), SimError> {
        let (map, _) = self.map_over(0..self.n_samples)?;
        let est = self.cell_estimates()?;
        let mut se = Grid2 { axis1: map.axis1.clone(), axis2: map.axis2.clone(), values: vec![f64::NAN; map.values.len()] };
        for (&(i, j), e) in self.cells.iter().zip(&est) {
            se.values[i * self.axis2.len() + j] = e.std_error;
        }
        let cut = Linecut::extract(&map, &se, gamma_abs)?;
        let mut reps = Vec::new();
        for r in batch_ranges(self.n_samples) {
            let (m, _) = self.map_over(r)?;
            reps.push(Linecut::extract(&m, &se, gamma_abs)?.visibility);
        }
        Ok((cut, batch_standard_error(&reps)))
    }
}

/// The `Δ₁ + Δ₂ = 0` linecut of a map and its CPT visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct Linecut {
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Index of `Δ₁ = Δ₂ = 0`.
    pub center: usize,
    pub s_tpr: f64,
    pub s_ref: f64,
    /// `(S_ref − S_tpr)/S_ref`.
    pub visibility: f64,
    /// First-order standard error from independent cell errors.
    pub visibility_se: f64,
    pub local_minimum: bool,
}

impl Linecut {
    /// Nearest-node antidiagonal of `map`; `S_ref` averages the cut over
    /// `|Δ₁| ∈ [0.3, 0.5]·Γ_abs`.
    pub fn extract(map: &Grid2, se: &Grid2, gamma_abs: f64) -> Result<Self, SimError> {
        let n2 = map.axis2.len();
        let (mut delta1, mut delta2, mut values, mut std_errors) = (vec![], vec![], vec![], vec![]);
        for (i, j) in antidiagonal_pairs(&map.axis1, &map.axis2) {
            let v = map.values[i * n2 + j];
            if v.is_nan() {
                continue;
            }
            delta1.push(map.axis1[i]);
            delta2.push(map.axis2[j]);
            values.push(v);
            std_errors.push(se.values[i * n2 + j]);
        }
        let center = nearest(&map.axis1, 0.0)
            .and_then(|i0| delta1.iter().position(|&d| d == map.axis1[i0]))
            .ok_or_else(|| SimError::Input("grid lacks the point Δ₁ = Δ₂ = 0 on the antidiagonal".into()))?;
        let (lo, hi) = (0.3 * gamma_abs * (1.0 - 1e-12), 0.5 * gamma_abs * (1.0 + 1e-12));
        let refs: Vec<usize> = (0..delta1.len()).filter(|&k| (lo..=hi).contains(&delta1[k].abs())).collect();
        if refs.is_empty() {
            return Err(SimError::Input("linecut has no reference points at |Δ₁| in [0.3, 0.5]·Γ_abs".into()));
        }
        let m = refs.len() as f64;
        let s_ref = refs.iter().map(|&k| values[k]).sum::<f64>() / m;
        let s_tpr = values[center];
        let (visibility, visibility_se) = if s_ref > 0.0 {
            let ref_var = refs.iter().map(|&k| std_errors[k] * std_errors[k]).sum::<f64>() / (m * m);
            let dv_dtpr = 1.0 / s_ref;
            let dv_dref = s_tpr / (s_ref * s_ref);
            let var = dv_dtpr * dv_dtpr * std_errors[center] * std_errors[center] + dv_dref * dv_dref * ref_var;
            ((s_ref - s_tpr) / s_ref, var.sqrt())
        } else {
            (0.0, 0.0)
        };
        let local_minimum = center > 0 && center + 1 < values.len() && s_tpr < values[center - 1] && s_tpr < values[center + 1];
        Ok(Self { delta1, delta2, values, std_errors, center, s_tpr, s_ref, visibility, visibility_se, local_minimum })
    }
}

/// Ensemble-averaged two-laser fluorescence map.
pub fn run_cpt_map(
    cfg: &SystemConfig,
    spec: &OhEnsembleSpec,
    settings: &CptSettings,
    exec: &Executor,
) -> Result<ExperimentResult, SimError> {
    let data = compute_cpt_map(cfg, spec, settings, exec)?;
    map_result(&data)
}

fn map_result(data: &CptMapData) -> Result<ExperimentResult, SimError> {
    let est = data.cell_estimates()?;
    let (convolved, wide) = data.map_over(0..data.n_samples)?;
    let n2 = data.axis2.len();
    let mut result = ExperimentResult::new("cpt-map");
    result.tables.push(Table::new(
        "cpt_map",
        vec![
            Column::new("delta1", "MHz", data.cells.iter().map(|c| data.axis1[c.0]).collect()),
            Column::new("delta2", "MHz", data.cells.iter().map(|c| data.axis2[c.1]).collect()),
            Column::new("fluorescence", "MHz", est.iter().map(|e| e.mean).collect()),
            Column::new("fluorescence_se", "MHz", est.iter().map(|e| e.std_error).collect()),
            Column::new("convolved", "MHz", data.cells.iter().map(|&(i, j)| convolved.values[i * n2 + j]).collect()),
        ],
    ));
    result.set("kernel_evaluations", data.kernel_evaluations());
    result.set("n_samples", data.n_samples);
    result.set("spectral_wander_sigma_MHz", data.wander_sigma);
    if wide {
        result.warn("spectral wandering sigma exceeds a quarter of the grid extent");
    }
    Ok(result)
}

/// Linecut and visibility of a map produced by [`run_cpt_map`].
pub fn cpt_linecut_and_visibility(map: &ExperimentResult, gamma_abs: f64) -> Result<ExperimentResult, SimError> {
    let t = map.table("cpt_map").ok_or_else(|| SimError::Input("result has no cpt_map table".into()))?;
    let col = |name: &str| {
        t.column(name).map(|c| c.values.clone()).ok_or_else(|| SimError::Input(format!("cpt_map lacks column {name}")))
    };
    let (d1, d2, conv, se) = (col("delta1_MHz")?, col("delta2_MHz")?, col("convolved_MHz")?, col("fluorescence_se_MHz")?);
    let axis = |v: &[f64]| -> Vec<f64> {
        let mut a: Vec<f64> = v.to_vec();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    };
    let (axis1, axis2) = (axis(&d1), axis(&d2));
    uniform_spacing(&axis1)?;
    uniform_spacing(&axis2)?;
    let index: BTreeMap<u64, usize> = axis2.iter().enumerate().map(|(k, v)| (v.to_bits(), k)).collect();
    let index1: BTreeMap<u64, usize> = axis1.iter().enumerate().map(|(k, v)| (v.to_bits(), k)).collect();
    let n2 = axis2.len();
    let mut g = Grid2 { axis1: axis1.clone(), axis2: axis2.clone(), values: vec![f64::NAN; axis1.len() * n2] };
    let mut s = g.clone();
    for r in 0..t.rows() {
        let k = index1[&d1[r].to_bits()] * n2 + index[&d2[r].to_bits()];
        g.values[k] = conv[r];
        s.values[k] = se[r];
    }
    let cut = Linecut::extract(&g, &s, gamma_abs)?;
    let mut result = ExperimentResult::new("cpt-visibility");
    result.tables.push(linecut_table(&cut, None));
    result.tables.push(Table::new(
        "visibility",
        vec![
            Column::new("visibility", "unitless", vec![cut.visibility]),
            Column::new("visibility_se", "unitless", vec![cut.visibility_se]),
            Column::new("s_tpr", "MHz", vec![cut.s_tpr]),
            Column::new("s_ref", "MHz", vec![cut.s_ref]),
            Column::new("local_minimum", "flag", vec![f64::from(u8::from(cut.local_minimum))]),
        ],
    ));
    Ok(result)
}

fn linecut_table(cut: &Linecut, field: Option<f64>) -> Table {
    let mut cols = Vec::new();
    if let Some(b) = field {
        cols.push(Column::new("b_z", "mT", vec![b; cut.values.len()]));
    }
    cols.extend([
        Column::new("delta1", "MHz", cut.delta1.clone()),
        Column::new("delta2", "MHz", cut.delta2.clone()),
        Column::new("fluorescence", "MHz", cut.values.clone()),
        Column::new("fluorescence_se", "MHz", cut.std_errors.clone()),
    ]);
    Table::new("linecut", cols)
}

/// CPT visibility as a function of a Faraday (`z`) field.
pub fn run_visibility_vs_field(
    cfg: &SystemConfig,
    spec: &OhEnsembleSpec,
    fields: &[f64],
    settings: &CptSettings,
    exec: &Executor,
) -> Result<ExperimentResult, SimError> {
    let gamma_abs = absorption_linewidth(&cfg.qd);
    let mut vis = [vec![], vec![], vec![], vec![], vec![]];
    let mut cuts: Vec<Table> = Vec::new();
    let mut evaluations = 0;
    for &b in fields {
        let mut c = cfg.clone();
        c.b_ext = MagneticField::new(0.0, 0.0, b);
        let data = compute_cpt_map(&c, spec, settings, exec)?;
        evaluations += data.kernel_evaluations();
        let (cut, batch_se) = data.visibility(gamma_abs)?;
        for (col, v) in vis.iter_mut().zip([b, cut.visibility, batch_se, cut.visibility_se, f64::from(u8::from(cut.local_minimum))]) {
            col.push(v);
        }
        cuts.push(linecut_table(&cut, Some(b)));
    }
    let mut linecuts = cuts[0].clone();
    for t in &cuts[1..] {
        for (a, b) in linecuts.columns.iter_mut().zip(&t.columns) {
            a.values.extend_from_slice(&b.values);
        }
    }
    let [b, v, se, cell_se, minimum] = vis;
    let mut result = ExperimentResult::new("cpt-visibility");
    result.tables.push(Table::new(
        "visibility_vs_field",
        vec![
            Column::new("b_z", "mT", b),
            Column::new("visibility", "unitless", v),
            Column::new("visibility_se", "unitless", se),
            Column::new("visibility_cell_se", "unitless", cell_se),
            Column::new("local_minimum", "flag", minimum),
        ],
    ));
    result.tables.push(linecuts);
    result.set("kernel_evaluations", evaluations);
    result.set("absorption_linewidth_MHz", gamma_abs);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antidiagonal_of_symmetric_grid() {
        let a = super::super::linspace(-2.0, 2.0, 5);
        assert_eq!(antidiagonal_pairs(&a, &a), vec![(0, 4), (1, 3), (2, 2), (3, 1), (4, 0)]);
    }

    #[test]
    fn flat_map_has_zero_visibility() {
        let a = super::super::linspace(-300.0, 300.0, 21);
        let g = Grid2::new(a.clone(), a.clone(), vec![5.0; 441]).unwrap();
        let s = Grid2::new(a.clone(), a, vec![0.0; 441]).unwrap();
        let cut = Linecut::extract(&g, &s, 480.0).unwrap();
        assert_eq!(cut.visibility, 0.0);
        assert!(!cut.local_minimum);
    }

    #[test]
    fn missing_center_is_geometry_error() {
        let a = super::super::linspace(10.0, 300.0, 11);
        let g = Grid2::new(a.clone(), a.clone(), vec![1.0; 121]).unwrap();
        assert!(Linecut::extract(&g, &g, 480.0).is_err());
    }
}
