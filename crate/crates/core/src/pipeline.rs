//! End-to-end chain for one coefficient field: cell problem, defect
//! correctors and potential once, then per `ε` the fine Dirichlet solve and
//! the two-scale assembly.
//!
//! The fine spacing is `h = ε / cells_per_period`, so every `ε` reuses the
//! same cell and defect lattices.

use crate::bvpsolve::{solve_dirichlet, Coefficient, DirichletProblem, DirichletSolution};
use crate::cellsolve::{solve_cell, PeriodicCell};
use crate::defectsolve::{
    self, assemble_full_corrector, defect_flux, defect_potential, solve_defect_correctors, CorrectorSet, DefectBox,
    DefectCorrector, PotentialRoute, TruncationPlan,
};
use crate::error::{Error, Result};
use crate::fields::{CoefficientField, Grid, GridField};
use crate::fv::FaceAveraging;
use crate::linalg::SolverOptions;
use crate::twoscale::{
    assemble_h, assemble_remainder, sample_correctors, FluxPotential, Manufactured, RemainderBundle, Subdomain,
};

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub cells_per_period: usize,
    /// `Ω = (-half_width, half_width)^d`.
    pub half_width: f64,
    /// `Ω₁` is the concentric box scaled by this factor.
    pub inner_fraction: f64,
    /// Defect box half-width, in units of `half_width / ε_min`.
    pub box_margin: f64,
    pub averaging: FaceAveraging,
    pub route: PotentialRoute,
    pub solver: SolverOptions,
    /// Defaults to a cosine product vanishing on `∂Ω`.
    pub u_star: Option<Manufactured>,
    /// Skip the potential and `H^ε`.
    pub skip_potential: bool,
    /// For algebraic tails in `d >= 2`, also solve on a box of twice the
    /// half-width and cancel the leading truncation error.
    pub box_extrapolation: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            cells_per_period: 8,
            half_width: 1.0,
            inner_fraction: 0.5,
            box_margin: 1.0,
            averaging: FaceAveraging::Auto,
            route: PotentialRoute::Convolution,
            solver: SolverOptions::default(),
            u_star: None,
            skip_potential: false,
            box_extrapolation: true,
        }
    }
}

/// Corrector and potential data shared by an `ε` sweep.
pub struct Prepared<'a> {
    pub field: &'a CoefficientField,
    pub opts: PipelineOptions,
    pub cell: PeriodicCell,
    pub correctors: CorrectorSet,
    /// Set when the defect correctors were extrapolated in the box size.
    pub truncation_ratio: Option<f64>,
    pub potential: Option<FluxPotential>,
    pub u_star: Manufactured,
    pub eps_min: f64,
}

/// One `ε` of a sweep.
pub struct EpsRun {
    pub eps: f64,
    pub grid: Grid,
    pub solution: DirichletSolution,
    pub bundle: RemainderBundle,
    pub u_star: GridField,
}

impl<'a> Prepared<'a> {
    pub fn new(field: &'a CoefficientField, opts: PipelineOptions, eps_min: f64) -> Result<Self> {
        field.ensure_solvable()?;
        if !(eps_min > 0.0 && eps_min < 1.0) {
            return Err(Error::param("eps", "must lie in (0, 1)"));
        }
        let d = field.dim();
        let n = opts.cells_per_period;
        let cell = solve_cell(field, n, opts.averaging, &opts.solver)?;
        let mut truncation_ratio = None;
        let (defect, defect_potential) = if field.has_defect() {
            let reach = opts.box_margin.max(1.0) * opts.half_width / eps_min;
            let plan = TruncationPlan::for_field(field, reach, n);
            let route = if d == 3 { PotentialRoute::Poisson } else { opts.route };
            let solve_box = |plan: &TruncationPlan| -> Result<(DefectBox, Vec<DefectCorrector>, Option<GridField>)> {
                let setup = DefectBox::new(field, &cell, plan, opts.averaging)?;
                let ws = solve_defect_correctors(field, &cell, &setup, &opts.solver)?;
                let pot = if opts.skip_potential {
                    None
                } else {
                    Some(defect_potential(&defect_flux(&setup, &ws), route)?.cell_potential())
                };
                Ok((setup, ws, pot))
            };
            let power = field.defect_decay_power().filter(|_| opts.box_extrapolation && d >= 2);
            match power {
                Some(s) => {
                    let q = defectsolve::truncation_ratio(s);
                    let small_grid = plan.grid(d)?;
                    let big_plan = TruncationPlan::new(2 * plan.half_width, n);
                    let (big_ws, big_pot) = {
                        let (_, ws, pot) = solve_box(&big_plan)?;
                        let ws = ws
                            .iter()
                            .map(|w| defectsolve::restrict_corrector(w, &small_grid))
                            .collect::<Result<Vec<_>>>()?;
                        let pot = pot.map(|p| defectsolve::restrict_cells(&p, &small_grid)).transpose()?;
                        (ws, pot)
                    };
                    let (setup, ws, pot) = solve_box(&plan)?;
                    let ws = big_ws
                        .iter()
                        .zip(&ws)
                        .map(|(b, s)| defectsolve::extrapolate_corrector(b, s, q))
                        .collect::<Result<Vec<_>>>()?;
                    let pot = match (big_pot, pot) {
                        (Some(b), Some(s)) => Some(defectsolve::extrapolate_cells(&b, &s, q)?),
                        _ => None,
                    };
                    truncation_ratio = Some(q);
                    (Some((setup, ws)), pot)
                }
                None => {
                    let (setup, ws, pot) = solve_box(&plan)?;
                    (Some((setup, ws)), pot)
                }
            }
        } else {
            (None, None)
        };
        let correctors = assemble_full_corrector(&cell, defect)?;
        let potential = if opts.skip_potential {
            None
        } else {
            Some(FluxPotential::new(&cell, defect_potential))
        };
        let u_star = match &opts.u_star {
            Some(u) => u.clone(),
            None => Manufactured::Cosine {
                half_width: opts.half_width,
            },
        };
        Ok(Prepared {
            field,
            opts,
            cell,
            correctors,
            truncation_ratio,
            potential,
            u_star,
            eps_min,
        })
    }

    pub fn fine_grid(&self, eps: f64) -> Result<Grid> {
        let h = eps / self.opts.cells_per_period as f64;
        Grid::centered_box(self.field.dim(), self.opts.half_width, h)
    }

    pub fn omega(&self, grid: &Grid) -> Subdomain {
        Subdomain::whole(grid)
    }

    pub fn omega1(&self, grid: &Grid) -> Subdomain {
        Subdomain::concentric(grid, self.opts.inner_fraction)
    }

    pub fn run(&self, eps: f64) -> Result<EpsRun> {
        if eps < self.eps_min * (1.0 - 1e-12) {
            return Err(Error::param("eps", "below the smallest eps the correctors were prepared for"));
        }
        let grid = self.fine_grid(eps)?;
        let a_star = self.cell.a_star.a_star;
        let u_star = &self.u_star;
        let f = |x: &[f64]| u_star.source(&a_star, x);
        let g = |x: &[f64]| u_star.value(x);
        let mut problem = DirichletProblem::with_source(
            grid.clone(),
            Coefficient::Oscillatory {
                field: self.field,
                eps,
            },
            f,
        )
        .with_boundary(&g);
        problem.averaging = self.opts.averaging;
        let solution = solve_dirichlet(&problem, &self.opts.solver)?;
        let samples = sample_correctors(&self.correctors, &grid, eps)?;
        let mut bundle = assemble_remainder(&solution, u_star, &samples)?;
        if let Some(p) = &self.potential {
            let b = p.sample(&grid, eps)?;
            bundle.h = Some(assemble_h(self.field, &samples, &b, u_star, &grid)?);
        }
        let us = GridField::scalar(grid.clone(), grid.centers().map(|x| u_star.value(&x)).collect())?;
        Ok(EpsRun {
            eps,
            grid,
            solution,
            bundle,
            u_star: us,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{construct_field, FieldSpec};
    use crate::twoscale::{field_norm, NormSpec};

    #[test]
    fn identity_coefficient_gives_vanishing_remainder() {
        let f = construct_field(&FieldSpec::new("identity", 2)).unwrap();
        let prep = Prepared::new(&f, PipelineOptions::default(), 0.25).unwrap();
        let run = prep.run(0.25).unwrap();
        let g = field_norm(&run.bundle.grad_r, NormSpec::Lp { p: 2.0 }, &prep.omega1(&run.grid), 0).unwrap();
        let h = run.grid.spacing();
        // u^ε = u_h, u* exact: the remainder is the discretization error
        assert!(g < 10.0 * h * h, "{g}");
        assert!(run.bundle.h.as_ref().unwrap().max_abs() == 0.0);
    }

    #[test]
    fn periodic_remainder_decays() {
        let f = construct_field(&FieldSpec::new("trig", 2)).unwrap();
        let prep = Prepared::new(&f, PipelineOptions::default(), 0.125).unwrap();
        let a = prep.run(0.25).unwrap();
        let b = prep.run(0.125).unwrap();
        let na = field_norm(&a.bundle.grad_r, NormSpec::Lp { p: 2.0 }, &prep.omega1(&a.grid), 0).unwrap();
        let nb = field_norm(&b.bundle.grad_r, NormSpec::Lp { p: 2.0 }, &prep.omega1(&b.grid), 0).unwrap();
        assert!(na / nb > 1.6, "{na} {nb}");
    }
}
