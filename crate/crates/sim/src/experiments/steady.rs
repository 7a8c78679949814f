use darkstate_core::dynamics::{
    evolve_between, mixed_ground_state, periodic_steady_state, LindbladGenerator, StepControl, DEFAULT_SETTLE,
};
use darkstate_core::model::{ground_basis, MagneticField, SystemConfig};
use darkstate_core::observables::{bloch_vector, ground_block};
use darkstate_core::qcore::DensityMatrix;
use darkstate_core::Error as CoreError;

use crate::error::SimError;
use crate::result::{Column, ExperimentResult, Table};

/// Stationary (time-averaged, for two beating lasers) state of a single
/// field realisation `oh`.
pub fn run_steady_state(cfg: &SystemConfig, oh: &MagneticField, step: StepControl) -> Result<ExperimentResult, SimError> {
    cfg.validate()?;
    if !oh.is_finite() {
        return Err(SimError::Input("overhauser field must be finite".into()));
    }
    let gen = LindbladGenerator::for_system(cfg, oh)?;
    let mut result = ExperimentResult::new("steady-state");
    let (rho, rate): (DensityMatrix, f64) = match periodic_steady_state(&gen) {
        Ok(ps) => (ps.mean_state()?, ps.mean_fluorescence(&gen)),
        Err(CoreError::NonUniqueSteadyState) => {
            result.warn(format!(
                "stationary state is not unique; reporting the state reached {DEFAULT_SETTLE} us after starting from the mixed ground state"
            ));
            let tr = evolve_between(&gen, &mixed_ground_state(), 0.0, DEFAULT_SETTLE, step, DEFAULT_SETTLE)?;
            let rho = tr.final_state().clone();
            let rate = gen.photon_rate(rho.matrix());
            (rho, rate)
        }
        Err(e) => return Err(e.into()),
    };
    let pops: Vec<f64> = (0..4).map(|i| rho.population(i)).collect();
    let mut columns = vec![
        Column::new("population_g_up", "unitless", vec![pops[0]]),
        Column::new("population_g_down", "unitless", vec![pops[1]]),
        Column::new("population_t_up", "unitless", vec![pops[2]]),
        Column::new("population_t_down", "unitless", vec![pops[3]]),
        Column::new("excited_population", "unitless", vec![pops[2] + pops[3]]),
        Column::new("fluorescence", "MHz", vec![rate]),
    ];
    // spin Bloch vector along the total field; undefined at zero field or
    // with the ground states emptied
    let bloch = ground_basis(&(cfg.b_ext + *oh)).ok().and_then(|b| bloch_vector(&ground_block(&rho, b)).ok());
    if let Some(b) = bloch {
        columns.extend([
            Column::new("bloch_x", "unitless", vec![b.x]),
            Column::new("bloch_y", "unitless", vec![b.y]),
            Column::new("bloch_z", "unitless", vec![b.z]),
            Column::new("purity", "unitless", vec![b.purity]),
        ]);
    }
    result.tables.push(Table::new("steady_state", columns));
    result.set("kernel_evaluations", 1);
    Ok(result)
}
