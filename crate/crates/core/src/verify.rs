//! Built-in oracle suite run by `atomion verify`.
//!
//! Every check is cheap enough to run on the configured grids in well under a
//! minute, and each failure message says which config field to change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::eigensolve::{ground_state_3d, lowest_eigenstates, solve_1d};
use crate::error::Result;
use crate::grid::{make_grid, Grid1D};
use crate::hamiltonians::{
    build_h1b, build_h1b_with, build_if_hamiltonian, build_relative_cmf, cm_solution,
    OperatorSpec, TermFlags,
};
use crate::observables::BOUNDARY_DENSITY_TOL;
use crate::potentials::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        Check::new(name, false, format!("could not run: {err}"))
    }
}

fn static_free(p: &ModelParams) -> ModelParams {
    p.with_beta(0.0).with_g(0.0)
}

/// Orbital densities on the edge of the box must be negligible.
fn boundary_decay(cfg: &RunConfig) -> Result<Check> {
    let grid = cfg.grids.cmf;
    let (_, orbitals) = solve_1d(&build_h1b(grid, &static_free(&cfg.model))?)?;
    let edge = |v: &[f64]| v[0].powi(2).max(v[v.len() - 1].powi(2));
    let (k, worst) = orbitals
        .iter()
        .take(4)
        .map(|v| edge(v))
        .enumerate()
        .fold((0, 0.0), |acc, (k, e)| if e > acc.1 { (k, e) } else { acc });
    let passed = worst < BOUNDARY_DENSITY_TOL;
    let detail = if passed {
        format!("largest edge density {worst:.2e} (orbital {k})")
    } else {
        format!(
            "orbital {k} has density {worst:.2e} at |z| = {} (limit {BOUNDARY_DENSITY_TOL:e}); \
             the box is too small, increase grids.cmf.extent",
            grid.extent()
        )
    };
    Ok(Check::new("boundary-decay", passed, detail))
}

/// `-∂² + z²/l_A⁴` has levels `(2n+1)/l_A²`.
fn analytic_oscillator(cfg: &RunConfig) -> Result<Check> {
    let p = static_free(&cfg.model);
    let terms = TermFlags {
        atom_ion: false,
        ..TermFlags::default()
    };
    let (e, _) = solve_1d(&build_h1b_with(cfg.grids.cmf, &p, terms)?)?;
    let w = 1.0 / (p.l_a * p.l_a);
    let err = (0..3)
        .map(|n| (e[n] - (2 * n + 1) as f64 * w).abs())
        .fold(0.0, f64::max);
    Ok(Check::new(
        "analytic-oscillator",
        err < 1e-8,
        format!("max |E_n - (2n+1)/l_A²| = {err:.2e} for n < 3"),
    ))
}

/// At `g = 0`, `β = 0` the two-atom levels are sums of orbital energies.
fn separable_limit(cfg: &RunConfig) -> Result<Check> {
    let p = static_free(&cfg.model);
    let grid = cfg.grids.cmf;
    let (eps, _) = solve_1d(&build_h1b(grid, &p)?)?;
    let mut sums = Vec::new();
    for i in 0..6 {
        for j in i..6 {
            sums.push(eps[i] + eps[j]);
        }
    }
    sums.sort_by(f64::total_cmp);
    let (rec, _) = lowest_eigenstates(&build_relative_cmf(grid, &p)?, 5, &cfg.solver.relative)?;
    let err = rec
        .eigenvalues
        .iter()
        .zip(&sums)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Check::new(
        "separable-limit",
        err < 1e-8,
        format!("max deviation from orbital-energy sums {err:.2e}"),
    ))
}

fn hermiticity_error(op: &OperatorSpec) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = op.shape().iter().product();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
    let (hx, hy) = (op.apply_vec(&x), op.apply_vec(&y));
    (dot(&x, &hy) - dot(&hx, &y)).abs() / (dot(&hx, &hx) * dot(&y, &y)).sqrt()
}

fn hermiticity(cfg: &RunConfig) -> Result<Check> {
    let p = cfg.model.with_beta(1.0).with_g(cfg.model.g.max(1.0));
    let rel = build_relative_cmf(cfg.grids.cmf, &p)?;
    let ion = build_if_hamiltonian(cfg.grids.ion, cfg.grids.ion_rel, &p)?;
    let err = hermiticity_error(&rel).max(hermiticity_error(&ion));
    Ok(Check::new(
        "hermiticity",
        err < 1e-12,
        format!("max relative |<x,Hy> - <Hx,y>| = {err:.2e}"),
    ))
}

/// Ion-frame ground energy against the relative ground plus the analytic
/// centre-of-mass energy, at `β = 1`, `g = 0`.
fn frame_equivalence(cfg: &RunConfig) -> Result<Check> {
    let p = cfg.model.with_beta(1.0).with_g(0.0);
    let (rec, _) = lowest_eigenstates(&build_relative_cmf(cfg.grids.cmf, &p)?, 1, &cfg.solver.relative)?;
    let cmf = rec.eigenvalues[0] + cm_solution(&p)?.energy;
    let op = build_if_hamiltonian(cfg.grids.ion, cfg.grids.ion_rel, &p)?;
    let (_, rep) = ground_state_3d(&op, &cfg.solver.ion_frame)?;
    let rel = (rep.energy - cmf).abs() / cmf.abs();
    Ok(Check::new(
        "frame-equivalence",
        rel < 0.01,
        format!(
            "ion frame {:.6}, relative + E_R {cmf:.6}, relative difference {rel:.2e}; \
             refine grids.ion / grids.ion_rel if this fails",
            rep.energy
        ),
    ))
}

/// Halving the spacing of the orbital grid. At `g = 0`, `β = 0` the
/// two-atom levels are orbital sums, so this bounds the two-atom change too.
fn grid_halving(cfg: &RunConfig) -> Result<Check> {
    let p = static_free(&cfg.model);
    let g = cfg.grids.cmf;
    let fine: Grid1D = make_grid(g.extent(), 2 * g.len())?;
    let (a, _) = solve_1d(&build_h1b(g, &p)?)?;
    let (b, _) = solve_1d(&build_h1b(fine, &p)?)?;
    let err = (0..4).map(|n| (a[n] - b[n]).abs()).fold(0.0, f64::max);
    Ok(Check::new(
        "grid-halving",
        err < 1e-4,
        format!("max orbital-energy change {err:.2e} from {} to {} points", g.len(), fine.len()),
    ))
}

/// Runs every oracle; a check that cannot run counts as failed.
pub fn run_checks(cfg: &RunConfig) -> Vec<Check> {
    let checks: [(&'static str, fn(&RunConfig) -> Result<Check>); 6] = [
        ("boundary-decay", boundary_decay),
        ("analytic-oscillator", analytic_oscillator),
        ("separable-limit", separable_limit),
        ("hermiticity", hermiticity),
        ("frame-equivalence", frame_equivalence),
        ("grid-halving", grid_halving),
    ];
    checks
        .iter()
        .map(|(name, f)| f(cfg).unwrap_or_else(|e| Check::failed(name, e)))
        .collect()
}
