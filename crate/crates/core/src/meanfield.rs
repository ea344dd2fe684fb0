//! Species mean field in the ion frame and the effective one-body potentials
//! obtained by integrating out one species.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::eigensolve::{
    lanczos_lowest, lowest_eigenstates, seed_vector, solve_1d, LanczosOptions, SolverOptions,
    SymmetryLayout, WaveFn,
};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::hamiltonians::{
    build_1d_operator, build_relative_cmf, build_two_atom, dot, position_tensor, Frame,
    LinearOperator, OperatorSpec, TermFlags, TwoAtomCoefficients,
};
use crate::potentials::{atom_ion_potential, ModelParams};

const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Species {
    Atom,
    Ion,
}

/// Where the density that generated an effective potential came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensitySource {
    Smf,
    ExactIf,
    Supplied,
}

/// A one-body density tabulated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density1D {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl Density1D {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Density1D { grid, values })
    }

    /// `|φ|²` of a quadrature-normalised orbital.
    pub fn from_orbital(grid: Grid1D, orbital: &[f64]) -> Result<Self> {
        Density1D::new(grid, orbital.iter().map(|x| x * x).collect())
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing()
    }

    fn check_normalised(&self) -> Result<()> {
        let t = self.total();
        if (t - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalised(t));
        }
        Ok(())
    }

    fn onto(&self, target: &Grid1D) -> Result<Vec<f64>> {
        let mut v = self.grid.resample_onto(&self.values, target)?;
        if self.grid != *target {
            let s = v.iter().sum::<f64>() * target.spacing();
            v.iter_mut().for_each(|x| *x /= s);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePotential {
    pub species: Species,
    pub source: DensitySource,
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

/// `(K ⋆ ρ)(z_a) = Σ_b K(z_a - z_b) ρ(z_b) Δ` on one grid, as a linear
/// convolution through a zero-padded FFT.
fn convolve_with_kernel(grid: &Grid1D, rho: &[f64], kernel: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing();
    let size = (3 * n - 2).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    // kernel index m ∈ [-(n-1), n-1] stored at m + n - 1
    let mut k: Vec<Complex64> = vec![Complex64::default(); size];
    for (slot, m) in (-(n as isize - 1)..n as isize).enumerate() {
        k[slot] = Complex64::new(kernel(m as f64 * h), 0.0);
    }
    let mut r: Vec<Complex64> = vec![Complex64::default(); size];
    for (slot, &x) in rho.iter().enumerate() {
        r[slot] = Complex64::new(x, 0.0);
    }
    fwd.process(&mut k);
    fwd.process(&mut r);
    for (a, b) in k.iter_mut().zip(&r) {
        *a *= b;
    }
    inv.process(&mut k);
    let scale = h / size as f64;
    (0..n).map(|a| k[a + n - 1].re * scale).collect()
}

/// `P_A^eff(z) = z²/l_A⁴ + ∫V_AI(z - z_I) ρ_I(z_I) dz_I` on `target`.
pub fn effective_atom_potential(
    rho_ion: &Density1D,
    target: Grid1D,
    p: &ModelParams,
    source: DensitySource,
) -> Result<EffectivePotential> {
    rho_ion.check_normalised()?;
    let rho = rho_ion.onto(&target)?;
    let conv = convolve_with_kernel(&target, &rho, |x| atom_ion_potential(x, p));
    let curv = p.trap_curvature();
    let values = target
        .points()
        .iter()
        .zip(conv)
        .map(|(z, c)| curv * z * z + c)
        .collect();
    Ok(EffectivePotential {
        species: Species::Atom,
        source,
        grid: target,
        values,
    })
}

/// `P_I^eff(z) = z²/(l_A⁴βη²) + N∫V_AI(z_A - z) ρ_A(z_A) dz_A` on `target`.
pub fn effective_ion_potential(
    rho_atom: &Density1D,
    target: Grid1D,
    p: &ModelParams,
    source: DensitySource,
) -> Result<EffectivePotential> {
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams(
            "effective ion potential needs a mobile ion (beta > 0)".into(),
        ));
    }
    rho_atom.check_normalised()?;
    let rho = rho_atom.onto(&target)?;
    // V is even, so V(z_A - z) = V(z - z_A)
    let conv = convolve_with_kernel(&target, &rho, |x| atom_ion_potential(x, p));
    let curv = p.trap_curvature() / (p.beta * p.eta * p.eta);
    let n = p.n_atoms as f64;
    let values = target
        .points()
        .iter()
        .zip(conv)
        .map(|(z, c)| curv * z * z + n * c)
        .collect();
    Ok(EffectivePotential {
        species: Species::Ion,
        source,
        grid: target,
        values,
    })
}

/// Ground orbital of `-c∂² + U` with `c = 1` for atoms and `c = β` for the
/// ion.
pub fn effective_ground_orbital(pot: &EffectivePotential, p: &ModelParams) -> Result<(Vec<f64>, f64)> {
    let c = match pot.species {
        Species::Atom => 1.0,
        Species::Ion => p.beta,
    };
    let op = build_1d_operator(pot.grid, c, pot.values.clone(), p)?;
    let (values, mut vectors) = solve_1d(&op)?;
    Ok((vectors.swap_remove(0), values[0]))
}

/// Settings for the species mean-field solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmfOptions {
    pub solver: SolverOptions,
    /// Iterate the mean ion-atom couplings to self-consistency instead of
    /// relying on their vanishing by parity.
    pub self_consistent: bool,
    pub max_iterations: usize,
    pub tol: f64,
}

impl Default for SmfOptions {
    fn default() -> Self {
        SmfOptions {
            solver: SolverOptions::default(),
            self_consistent: false,
            max_iterations: 50,
            tol: 1e-10,
        }
    }
}

/// Product state `ψ_I(z_I)·ψ_A(r_1, r_2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmfSolution {
    pub ion_grid: Grid1D,
    pub ion: Vec<f64>,
    pub ion_energy: f64,
    /// Atom-pair factor on `(r_1, r_2)`; the relative coordinates coincide
    /// in both frames, so it carries the relative-frame tag.
    pub atoms: WaveFn,
    pub atom_energy: f64,
    pub total: f64,
    pub iterations: usize,
}

impl SmfSolution {
    /// The product state on the ion-frame grid.
    pub fn product(&self) -> WaveFn {
        let block = self.atoms.amplitudes.len();
        let mut amplitudes = Vec::with_capacity(self.ion.len() * block);
        for &a in &self.ion {
            amplitudes.extend(self.atoms.amplitudes.iter().map(|x| a * x));
        }
        let g = self.atoms.grids[0];
        WaveFn {
            frame: Frame::IonFrame,
            grids: vec![self.ion_grid, g, g],
            amplitudes,
            exchange: 1,
            parity: 1,
        }
    }
}

/// Ion factor: `-β∂² + (N + 1/(βη²)) z²/l_A⁴`.
pub fn smf_ion_operator(grid: Grid1D, p: &ModelParams) -> Result<OperatorSpec> {
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams("SMF needs a mobile ion (beta > 0)".into()));
    }
    let curv = p.trap_curvature() * (p.n_atoms as f64 + 1.0 / (p.beta * p.eta * p.eta));
    let pot = grid.points().iter().map(|z| curv * z * z).collect();
    build_1d_operator(grid, p.beta, pot, p)
}

/// Atom factor: the `r`-only rows of the ion-frame operator.
pub fn smf_atom_operator(grid: Grid1D, p: &ModelParams) -> Result<OperatorSpec> {
    p.validate()?;
    build_two_atom(
        Frame::CmfRelative,
        grid,
        p,
        TermFlags::default(),
        TwoAtomCoefficients {
            kinetic: 1.0 + p.beta,
            derivative: 2.0 * p.beta,
            trap: p.trap_curvature(),
            positional: 0.0,
        },
    )
}

/// Species mean-field ground state in the ion frame.
pub fn smf_solve_if(
    ion_grid: Grid1D,
    rel_grid: Grid1D,
    p: &ModelParams,
    opts: &SmfOptions,
) -> Result<SmfSolution> {
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams("SMF needs a mobile ion (beta > 0)".into()));
    }
    if p.n_atoms != 2 {
        return Err(Error::Unsupported("SMF is implemented for two atoms".into()));
    }
    if p.eta != 1.0 && !opts.self_consistent {
        return Err(Error::Unsupported(format!(
            "eta = {} needs the self-consistent iteration",
            p.eta
        )));
    }
    let ion_op = smf_ion_operator(ion_grid, p)?;
    let atom_op = smf_atom_operator(rel_grid, p)?;
    if opts.self_consistent {
        return smf_fixed_point(ion_op, atom_op, p, opts);
    }
    let (ion_e, mut ion_v) = solve_1d(&ion_op)?;
    let (rec, mut states) = lowest_eigenstates(&atom_op, 1, &opts.solver)?;
    let ion = ion_v.swap_remove(0);
    let atoms = states.swap_remove(0);
    Ok(SmfSolution {
        ion_grid,
        ion,
        ion_energy: ion_e[0],
        atom_energy: rec.eigenvalues[0],
        total: ion_e[0] + rec.eigenvalues[0],
        atoms,
        iterations: 1,
    })
}

/// Alternating solve of both factors in the mean field of the other. The
/// coupling `2z_IΣr_i/l_A⁴` enters each factor through the mean position of
/// the other; `⟨∂⟩` of a real state vanishes, so the derivative row drops.
fn smf_fixed_point(
    ion_op: OperatorSpec,
    atom_op: OperatorSpec,
    p: &ModelParams,
    opts: &SmfOptions,
) -> Result<SmfSolution> {
    let curv = p.trap_curvature();
    let ion_grid = ion_op.grids()[0];
    let rel_grid = atom_op.grids()[0];
    let zi = ion_grid.points();
    let rgrids = [rel_grid, rel_grid];
    let zr = rel_grid.points();
    let sum_r = position_tensor(&rgrids, |i| zr[i[0]] + zr[i[1]]);
    let layout = SymmetryLayout::for_frame(&rgrids, Frame::CmfRelative)?;
    let project = |x: &mut [f64]| layout.project(x, 0);
    let lanczos: LanczosOptions = opts.solver.lanczos;
    let (mut mean_zi, mut mean_sum_r) = (0.0f64, 0.0f64);
    let mut atom_start = seed_vector(&rgrids, p.l_a, lanczos.seed);
    for it in 1..=opts.max_iterations {
        let ion_shift: Vec<f64> = zi.iter().map(|z| 2.0 * curv * z * mean_sum_r).collect();
        let ion_now = ion_op.clone().shifted(&ion_shift);
        let (ion_e, mut ion_v) = solve_1d(&ion_now)?;
        let ion = ion_v.swap_remove(0);
        let hi = ion_grid.spacing();
        let new_zi: f64 = ion.iter().zip(&zi).map(|(a, z)| a * a * z).sum::<f64>() * hi;

        let atom_shift: Vec<f64> = sum_r.iter().map(|s| 2.0 * curv * new_zi * s).collect();
        let atom_now = atom_op.clone().shifted(&atom_shift);
        let out = lanczos_lowest(&atom_now, atom_start.clone(), 1, &lanczos, &project)?;
        let x = &out.vectors[0];
        let new_sum_r = dot(&x.iter().zip(&sum_r).map(|(a, s)| a * s).collect::<Vec<_>>(), x);
        atom_start = x.clone();

        let change = (new_zi - mean_zi).abs() + (new_sum_r - mean_sum_r).abs();
        mean_zi = new_zi;
        mean_sum_r = new_sum_r;
        if change < opts.tol {
            let scale = 1.0 / atom_now.cell_volume().sqrt();
            let mut amps: Vec<f64> = x.iter().map(|v| v * scale).collect();
            crate::eigensolve::fix_phase(&mut amps);
            let atoms = WaveFn {
                frame: Frame::CmfRelative,
                grids: rgrids.to_vec(),
                amplitudes: amps,
                exchange: 1,
                parity: 0,
            };
            // the product energy counts the coupling once
            let coupling = 2.0 * curv * mean_zi * mean_sum_r;
            let ion_energy = ion_e[0] - coupling;
            let atom_energy = out.values[0] - coupling;
            return Ok(SmfSolution {
                ion_grid,
                ion,
                ion_energy,
                atom_energy,
                total: ion_energy + atom_energy + coupling,
                atoms,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residuals: vec![mean_zi, mean_sum_r],
    })
}

/// Laboratory-frame product diagnostic: both atoms next to a pinned ion,
/// plus the ground energy of the bare ion trap `-β∂² + z²/(l_A⁴βη²)`.
/// Not a physical approximation of the coupled system.
pub fn lf_smf_energy(rel_grid: Grid1D, p: &ModelParams, opts: &SolverOptions) -> Result<f64> {
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams("needs a mobile ion (beta > 0)".into()));
    }
    let pinned = p.with_beta(0.0);
    let op = build_relative_cmf(rel_grid, &pinned)?;
    let (rec, _) = lowest_eigenstates(&op, 1, opts)?;
    let ion_trap = 1.0 / (p.eta * p.l_a * p.l_a);
    Ok(rec.eigenvalues[0] + ion_trap)
}

/// `⟨Ψ|H|Ψ⟩` for a normalised state of any operator.
pub fn energy_expectation(op: &OperatorSpec, psi: &WaveFn) -> Result<f64> {
    if op.dim() != psi.amplitudes.len() {
        return Err(Error::LengthMismatch {
            expected: op.dim(),
            got: psi.amplitudes.len(),
        });
    }
    Ok(op.expectation(&psi.amplitudes))
}
