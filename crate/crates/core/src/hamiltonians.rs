//! Matrix-free Hamiltonians on tensor-product Fourier grids.
//!
//! Every operator in this module has the form `H = T(∂) + V(x)`: a real
//! quadratic form in the wavenumbers applied by FFT, plus a diagonal in
//! position space. Mixed derivatives between the two atoms enter through the
//! pair momentum `k_1 + k_2` folded back into the Brillouin zone, so the
//! lattice two-body problem at fixed total momentum does not depend on `β`.
//! Terms odd in a single momentum use wavenumbers with the zone-boundary mode
//! removed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{wavenumber_tensor, Grid1D, SpectralEngine};
use crate::potentials::{atom_ion_potential, contact_coefficient, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    /// One atom next to a static ion, coordinate `z_A`.
    SingleParticle,
    /// Relative coordinates `(r_1, r_2)` of the centre-of-mass frame.
    CmfRelative,
    /// Ion frame `(z_I, r_1, r_2)`.
    IonFrame,
    /// Centre-of-mass coordinate `R` alone.
    CmAnalytic,
    /// Full centre-of-mass frame `(R, r_1, r_2)` including the `η ≠ 1`
    /// coupling row.
    CoupledCmf,
}

impl Frame {
    pub fn tag(&self) -> &'static str {
        match self {
            Frame::SingleParticle => "lf-1b",
            Frame::CmfRelative => "cmf-relative",
            Frame::IonFrame => "if",
            Frame::CmAnalytic => "cm-analytic",
            Frame::CoupledCmf => "cmf-coupled",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Frame> {
        [
            Frame::SingleParticle,
            Frame::CmfRelative,
            Frame::IonFrame,
            Frame::CmAnalytic,
            Frame::CoupledCmf,
        ]
        .into_iter()
        .find(|f| f.tag() == tag)
    }
}

/// Term groups that can be switched off individually.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFlags {
    pub kinetic: bool,
    pub trap: bool,
    pub atom_ion: bool,
    pub contact: bool,
    /// `-2β ∂_{r_i}∂_{r_j}` between atoms.
    pub derivative_coupling: bool,
    /// `-(2d/l_A⁴) r_i r_j` between atoms (centre-of-mass frame).
    pub positional_coupling: bool,
    /// Ion-frame row `2Σ(z_I r_i/l_A⁴ + β ∂_{z_I}∂_{r_i})`.
    pub ion_atom_coupling: bool,
}

impl Default for TermFlags {
    fn default() -> Self {
        TermFlags {
            kinetic: true,
            trap: true,
            atom_ion: true,
            contact: true,
            derivative_coupling: true,
            positional_coupling: true,
            ion_atom_coupling: true,
        }
    }
}

/// A built, immutable Hamiltonian ready for application.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    frame: Frame,
    grids: Vec<Grid1D>,
    params: ModelParams,
    terms: TermFlags,
    kinetic: Vec<f64>,
    potential: Vec<f64>,
    engine: SpectralEngine,
}

/// Real symmetric operator acting on flat row-major arrays.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for OperatorSpec {
    fn dim(&self) -> usize {
        self.potential.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.engine.apply_multiplier(x, &self.kinetic, y);
        for ((yi, &xi), &vi) in y.iter_mut().zip(x).zip(&self.potential) {
            *yi += vi * xi;
        }
    }
}

impl OperatorSpec {
    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn grids(&self) -> &[Grid1D] {
        &self.grids
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn terms(&self) -> TermFlags {
        self.terms
    }

    pub fn shape(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.len()).collect()
    }

    pub fn ndim(&self) -> usize {
        self.grids.len()
    }

    /// Quadrature weight of one grid cell, `Π Δ_a`.
    pub fn cell_volume(&self) -> f64 {
        self.grids.iter().map(|g| g.spacing()).product()
    }

    /// Wavenumber-space multiplier of the kinetic part.
    pub fn kinetic_multiplier(&self) -> &[f64] {
        &self.kinetic
    }

    /// Position-space diagonal.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Adds `extra` to the diagonal part of the operator.
    pub(crate) fn shifted(mut self, extra: &[f64]) -> Self {
        for (v, e) in self.potential.iter_mut().zip(extra) {
            *v += e;
        }
        self
    }

    pub fn engine(&self) -> &SpectralEngine {
        &self.engine
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        y
    }

    /// `⟨ψ|H|ψ⟩` under grid quadrature.
    pub fn expectation(&self, psi: &[f64]) -> f64 {
        let hpsi = self.apply_vec(psi);
        dot(psi, &hpsi) * self.cell_volume()
    }

    /// Largest value the kinetic plus potential parts can reach; a cheap upper
    /// bound on the spectral radius.
    pub fn spectral_bound(&self) -> f64 {
        let t = self.kinetic.iter().cloned().fold(0.0, f64::max);
        let v = self.potential.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs()));
        t + v
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major position tensor: `value(index)` on every grid point.
pub(crate) fn position_tensor(grids: &[Grid1D], value: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    // same enumeration order as the wavenumber tensor
    wavenumber_tensor(grids, value)
}

fn require_two_atoms(p: &ModelParams) -> Result<()> {
    if p.n_atoms != 2 {
        return Err(Error::Unsupported(format!(
            "two-atom operators need n_atoms = 2, got {}",
            p.n_atoms
        )));
    }
    Ok(())
}

/// `h_1b = -∂² + z²/l_A⁴ + V_AI(z)` for one atom next to a static ion.
pub fn build_h1b(grid: Grid1D, p: &ModelParams) -> Result<OperatorSpec> {
    build_h1b_with(grid, p, TermFlags::default())
}

pub fn build_h1b_with(grid: Grid1D, p: &ModelParams, terms: TermFlags) -> Result<OperatorSpec> {
    p.validate()?;
    let k = grid.wavenumbers();
    let kinetic = if terms.kinetic {
        k.iter().map(|k| k * k).collect()
    } else {
        vec![0.0; grid.len()]
    };
    let potential = grid
        .points()
        .iter()
        .map(|&z| {
            let mut v = 0.0;
            if terms.trap {
                v += z * z * p.trap_curvature();
            }
            if terms.atom_ion {
                v += atom_ion_potential(z, p);
            }
            v
        })
        .collect();
    Ok(OperatorSpec {
        frame: Frame::SingleParticle,
        grids: vec![grid],
        params: *p,
        terms,
        kinetic,
        potential,
        engine: SpectralEngine::new(&[grid]),
    })
}

/// `-c∂² + U(z)` for an arbitrary tabulated potential, e.g. an effective
/// one-body potential.
pub fn build_1d_operator(
    grid: Grid1D,
    kinetic_coeff: f64,
    potential: Vec<f64>,
    p: &ModelParams,
) -> Result<OperatorSpec> {
    if potential.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: potential.len(),
        });
    }
    if let Some(bad) = potential.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("non-finite potential value {bad}")));
    }
    let k = grid.wavenumbers();
    Ok(OperatorSpec {
        frame: Frame::SingleParticle,
        grids: vec![grid],
        params: *p,
        terms: TermFlags::default(),
        kinetic: k.iter().map(|k| kinetic_coeff * k * k).collect(),
        potential,
        engine: SpectralEngine::new(&[grid]),
    })
}

/// Relative-coordinate Hamiltonian of the centre-of-mass frame for `η = 1`:
///
/// `Σ_i[-(1+β)∂²_i + (1-d) r_i²/l_A⁴ + V_AI(r_i)] + gδ(r_1-r_2)
///  - 2β∂_1∂_2 - (2d/l_A⁴) r_1 r_2`.
pub fn build_relative_cmf(grid: Grid1D, p: &ModelParams) -> Result<OperatorSpec> {
    build_relative_cmf_with(grid, p, TermFlags::default())
}

pub fn build_relative_cmf_with(
    grid: Grid1D,
    p: &ModelParams,
    terms: TermFlags,
) -> Result<OperatorSpec> {
    p.validate()?;
    require_two_atoms(p)?;
    if p.eta != 1.0 && p.beta > 0.0 {
        return Err(Error::Unsupported(format!(
            "coupled CM not supported (eta = {})",
            p.eta
        )));
    }
    let d = p.d();
    let curv = p.trap_curvature();
    build_two_atom(
        Frame::CmfRelative,
        grid,
        p,
        terms,
        TwoAtomCoefficients {
            kinetic: 1.0 + p.beta,
            derivative: 2.0 * p.beta,
            trap: (1.0 - d) * curv,
            positional: -2.0 * d * curv,
        },
    )
}

/// Coefficients of the generic two-atom operator
/// `Σ_i[-a∂²_i + c r_i² + V(r_i)] + gδ - b∂_1∂_2 + e r_1 r_2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TwoAtomCoefficients {
    pub kinetic: f64,
    pub derivative: f64,
    pub trap: f64,
    pub positional: f64,
}

pub(crate) fn build_two_atom(
    frame: Frame,
    grid: Grid1D,
    p: &ModelParams,
    terms: TermFlags,
    c: TwoAtomCoefficients,
) -> Result<OperatorSpec> {
    let grids = vec![grid, grid];
    let k = grid.wavenumbers();
    let s = grid.pair_wavenumbers();
    let n = grid.len();
    let kinetic = wavenumber_tensor(&grids, |i| {
        let (k1, k2) = (k[i[0]], k[i[1]]);
        let mut t = 0.0;
        if terms.kinetic {
            t += c.kinetic * (k1 * k1 + k2 * k2);
        }
        if terms.derivative_coupling {
            // -b ∂_1∂_2 = (b/2)[(k_1+k_2)² - k_1² - k_2²], pair momentum folded
            let kp = s[i[0] * n + i[1]];
            t += 0.5 * c.derivative * (kp * kp - k1 * k1 - k2 * k2);
        }
        t
    });
    let z = grid.points();
    let zt = grid.odd_points();
    let vai: Vec<f64> = z.iter().map(|&r| atom_ion_potential(r, p)).collect();
    let contact = contact_coefficient(&grid, p)?;
    let potential = position_tensor(&grids, |i| {
        let (a, b) = (i[0], i[1]);
        let mut v = 0.0;
        if terms.trap {
            v += c.trap * (z[a] * z[a] + z[b] * z[b]);
        }
        if terms.atom_ion {
            v += vai[a] + vai[b];
        }
        if terms.contact && a == b {
            v += contact;
        }
        if terms.positional_coupling {
            v += c.positional * zt[a] * zt[b];
        }
        v
    });
    Ok(OperatorSpec {
        frame,
        grids: grids.clone(),
        params: *p,
        terms,
        kinetic,
        potential,
        engine: SpectralEngine::new(&grids),
    })
}

/// Ground state of the centre-of-mass oscillator `H_R = -d∂²_R + R²/(l_A⁴ d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CMSolution {
    /// Oscillator frequency `Ω = 2/l_A²`.
    pub omega: f64,
    /// Ground energy `E_R = Ω/2`.
    pub energy: f64,
    /// `⟨R²⟩`.
    pub mean_r2: f64,
    /// `⟨-∂²/∂R²⟩`.
    pub mean_neg_d2: f64,
}

pub fn cm_solution(p: &ModelParams) -> Result<CMSolution> {
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams(
            "static ion (beta = 0) has no centre-of-mass degree of freedom".into(),
        ));
    }
    if p.eta != 1.0 {
        return Err(Error::Unsupported(format!(
            "coupled CM not supported (eta = {})",
            p.eta
        )));
    }
    let d = p.d();
    let l2 = p.l_a * p.l_a;
    let omega = 2.0 / l2;
    Ok(CMSolution {
        omega,
        energy: 0.5 * omega,
        mean_r2: d * l2 / 2.0,
        mean_neg_d2: 1.0 / (2.0 * d * l2),
    })
}

/// Centre-of-mass sub-Hamiltonian on a grid,
/// `-d∂²_R + (1 + Nβη²) R² / (l_A⁴ β η²)`.
pub fn build_cm(grid: Grid1D, p: &ModelParams) -> Result<OperatorSpec> {
    p.validate()?;
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams("beta = 0 has no CM coordinate".into()));
    }
    let d = p.d();
    let n = p.n_atoms as f64;
    let be2 = p.beta * p.eta * p.eta;
    let curv = p.trap_curvature() * (1.0 + n * be2) / be2;
    let k = grid.wavenumbers();
    Ok(OperatorSpec {
        frame: Frame::CmAnalytic,
        grids: vec![grid],
        params: *p,
        terms: TermFlags::default(),
        kinetic: k.iter().map(|k| d * k * k).collect(),
        potential: grid.points().iter().map(|r| curv * r * r).collect(),
        engine: SpectralEngine::new(&[grid]),
    })
}

/// Ion-frame Hamiltonian on `(z_I, r_1, r_2)`:
///
/// `Σ_i[-(1+β)∂²_{r_i} + r_i²/l_A⁴ + V_AI(r_i)] - β∂²_{z_I}
///  + (N + 1/(βη²)) z_I²/l_A⁴ + gδ(r_1-r_2) - 2β∂_{r_1}∂_{r_2}
///  + 2Σ_i(z_I r_i/l_A⁴ + β∂_{z_I}∂_{r_i})`.
pub fn build_if_hamiltonian(
    grid_ion: Grid1D,
    grid_rel: Grid1D,
    p: &ModelParams,
) -> Result<OperatorSpec> {
    build_if_hamiltonian_with(grid_ion, grid_rel, p, TermFlags::default())
}

pub fn build_if_hamiltonian_with(
    grid_ion: Grid1D,
    grid_rel: Grid1D,
    p: &ModelParams,
    terms: TermFlags,
) -> Result<OperatorSpec> {
    p.validate()?;
    require_two_atoms(p)?;
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams(
            "ion frame needs a mobile ion (beta > 0)".into(),
        ));
    }
    let beta = p.beta;
    let curv = p.trap_curvature();
    let n = p.n_atoms as f64;
    let ion_curv = curv * (n + 1.0 / (beta * p.eta * p.eta));
    let grids = vec![grid_ion, grid_rel, grid_rel];
    let ki = grid_ion.wavenumbers();
    let kit = grid_ion.derivative_wavenumbers();
    let kr = grid_rel.wavenumbers();
    let s = grid_rel.pair_wavenumbers();
    let st = grid_rel.pair_derivative_wavenumbers();
    let nr = grid_rel.len();
    let kinetic = wavenumber_tensor(&grids, |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        let (k1, k2) = (kr[b], kr[c]);
        let mut t = 0.0;
        if terms.kinetic {
            t += beta * ki[a] * ki[a] + (1.0 + beta) * (k1 * k1 + k2 * k2);
        }
        if terms.derivative_coupling {
            let kp = s[b * nr + c];
            t += beta * (kp * kp - k1 * k1 - k2 * k2);
        }
        if terms.ion_atom_coupling {
            // +2β ∂_I(∂_1+∂_2) → -2β k_I (k_1+k_2)
            t -= 2.0 * beta * kit[a] * st[b * nr + c];
        }
        t
    });
    let zi = grid_ion.points();
    let zr = grid_rel.points();
    let zit = grid_ion.odd_points();
    let zrt = grid_rel.odd_points();
    let vai: Vec<f64> = zr.iter().map(|&r| atom_ion_potential(r, p)).collect();
    let contact = contact_coefficient(&grid_rel, p)?;
    let potential = position_tensor(&grids, |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        let mut v = 0.0;
        if terms.trap {
            v += curv * (zr[b] * zr[b] + zr[c] * zr[c]) + ion_curv * zi[a] * zi[a];
        }
        if terms.atom_ion {
            v += vai[b] + vai[c];
        }
        if terms.contact && b == c {
            v += contact;
        }
        if terms.ion_atom_coupling {
            v += 2.0 * curv * zit[a] * (zrt[b] + zrt[c]);
        }
        v
    });
    Ok(OperatorSpec {
        frame: Frame::IonFrame,
        grids: grids.clone(),
        params: *p,
        terms,
        kinetic,
        potential,
        engine: SpectralEngine::new(&grids),
    })
}

/// Full centre-of-mass-frame operator on `(R, r_1, r_2)` including the
/// `(2d/(l_A⁴βη²))(η²-1) Σ R r_i` row that couples `R` to the relative motion
/// when `η ≠ 1`.
pub fn build_coupled_cmf(
    grid_cm: Grid1D,
    grid_rel: Grid1D,
    p: &ModelParams,
) -> Result<OperatorSpec> {
    p.validate()?;
    require_two_atoms(p)?;
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParams("beta = 0 has no CM coordinate".into()));
    }
    let beta = p.beta;
    let d = p.d();
    let curv = p.trap_curvature();
    let n = p.n_atoms as f64;
    let be2 = beta * p.eta * p.eta;
    let cm_curv = curv * (1.0 + n * be2) / be2;
    let coupling = 2.0 * d * curv * (p.eta * p.eta - 1.0) / be2;
    let grids = vec![grid_cm, grid_rel, grid_rel];
    let kc = grid_cm.wavenumbers();
    let kr = grid_rel.wavenumbers();
    let s = grid_rel.pair_wavenumbers();
    let nr = grid_rel.len();
    let kinetic = wavenumber_tensor(&grids, |i| {
        let kp = s[i[1] * nr + i[2]];
        d * kc[i[0]] * kc[i[0]] + kr[i[1]] * kr[i[1]] + kr[i[2]] * kr[i[2]] + beta * kp * kp
    });
    let zc = grid_cm.points();
    let zr = grid_rel.points();
    let zct = grid_cm.odd_points();
    let zrt = grid_rel.odd_points();
    let vai: Vec<f64> = zr.iter().map(|&r| atom_ion_potential(r, p)).collect();
    let contact = contact_coefficient(&grid_rel, p)?;
    let potential = position_tensor(&grids, |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        let mut v = (1.0 - d) * curv * (zr[b] * zr[b] + zr[c] * zr[c]) + vai[b] + vai[c]
            - 2.0 * d * curv * zrt[b] * zrt[c]
            + cm_curv * zc[a] * zc[a]
            + coupling * zct[a] * (zrt[b] + zrt[c]);
        if b == c {
            v += contact;
        }
        v
    });
    Ok(OperatorSpec {
        frame: Frame::CoupledCmf,
        grids: grids.clone(),
        params: *p,
        terms: TermFlags::default(),
        kinetic,
        potential,
        engine: SpectralEngine::new(&grids),
    })
}
