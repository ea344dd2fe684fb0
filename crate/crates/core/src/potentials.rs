//! Model atom-ion interaction, trap parameters and the lattice contact term.
//!
//! All quantities are in units of the polarisation energy `E*` and length `R*`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;

/// Physical constants of the hybrid model.
///
/// The reduced mass fraction `d = β/(1 + Nβ)` is always derived via
/// [`ModelParams::d`] and never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Short-range cut-off of the `-1/r⁴` tail, in `R*⁻⁴`.
    pub kappa: f64,
    /// Height of the repulsive core, in `E*`.
    pub v0: f64,
    /// Width parameter of the repulsive core, in `R*⁻²`.
    pub gamma: f64,
    /// Atom-atom contact strength, in `E*·R*`.
    pub g: f64,
    /// Mass ratio `m_A / m_I`.
    pub beta: f64,
    /// Trap frequency ratio `ω_A / ω_I`.
    pub eta: f64,
    /// Atomic oscillator length, in `R*`.
    pub l_a: f64,
    /// Number of atoms.
    pub n_atoms: usize,
    /// Lattice representation of the contact interaction.
    pub contact_scheme: ContactScheme,
}

/// How `g·δ(r_i - r_j)` is put on the grid diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactScheme {
    /// `g/Δ`. Eigenvalues converge only linearly in `Δ`, because the grid
    /// cannot resolve the cusp at `r_i = r_j`.
    Bare,
    /// `g_Λ/Δ` with `1/g_Λ = 1/g + Δ/(2π²)`, which restores the two-body
    /// scattering amplitude lost above the grid cutoff `Λ = π/Δ` for the
    /// relative kinetic energy `2q²`.
    #[default]
    Renormalized,
}

impl Default for ModelParams {
    fn default() -> Self {
        default_params()
    }
}

/// `κ = 80`, `v0 = 3κ`, `γ = 4√(10κ)`, `l_A = 0.5`, `η = 1`, `N = 2`, with a
/// static (`β = 0`) ion and non-interacting atoms.
pub fn default_params() -> ModelParams {
    let kappa = 80.0;
    ModelParams {
        kappa,
        v0: 3.0 * kappa,
        gamma: 4.0 * (10.0f64 * kappa).sqrt(),
        g: 0.0,
        beta: 0.0,
        eta: 1.0,
        l_a: 0.5,
        n_atoms: 2,
        contact_scheme: ContactScheme::default(),
    }
}

impl ModelParams {
    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// `d = β / (1 + Nβ)`, the atom-to-total mass ratio.
    pub fn d(&self) -> f64 {
        self.beta / (1.0 + self.n_atoms as f64 * self.beta)
    }

    /// `1 / l_A⁴`, the atomic trap curvature.
    pub fn trap_curvature(&self) -> f64 {
        self.l_a.powi(-4)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("v0", self.v0),
            ("gamma", self.gamma),
            ("l_a", self.l_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_atoms < 1 {
            return Err(Error::InvalidParams("n_atoms must be at least 1".into()));
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return Err(Error::InvalidParams(format!(
                "g must be finite and non-negative, got {}",
                self.g
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if self.beta > 0.0 && !(self.eta > 0.0) {
            return Err(Error::InvalidParams(format!(
                "eta must be positive for a mobile ion, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn atom_ion(&self, r: f64) -> f64 {
        atom_ion_potential(r, self)
    }
}

/// `V(r) = v0·exp(-γr²) - 1/(r⁴ + 1/κ)`.
pub fn atom_ion_potential(r: f64, p: &ModelParams) -> f64 {
    let r2 = r * r;
    p.v0 * (-p.gamma * r2).exp() - 1.0 / (r2 * r2 + 1.0 / p.kappa)
}

/// Coefficient `g/Δ` placed on the lattice diagonal `r_i = r_j` to represent
/// `g·δ(r_i - r_j)`.
pub fn contact_diagonal(grid: &Grid1D, g: f64) -> Result<f64> {
    if !(g >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "attractive or undefined contact strength g = {g}"
        )));
    }
    Ok(g / grid.spacing())
}

/// Coupling constant actually placed on a grid of spacing `Δ`.
pub fn contact_strength(grid: &Grid1D, p: &ModelParams) -> f64 {
    match p.contact_scheme {
        ContactScheme::Bare => p.g,
        ContactScheme::Renormalized => p.g / (1.0 + p.g * grid.spacing() / (2.0 * PI * PI)),
    }
}

/// `∂g_Λ/∂g`, so that `⟨∂H/∂g⟩` can be formed from the lattice contact.
pub fn contact_strength_slope(grid: &Grid1D, p: &ModelParams) -> f64 {
    match p.contact_scheme {
        ContactScheme::Bare => 1.0,
        ContactScheme::Renormalized => {
            let x = 1.0 + p.g * grid.spacing() / (2.0 * PI * PI);
            1.0 / (x * x)
        }
    }
}

/// Diagonal coefficient for the configured contact scheme.
pub fn contact_coefficient(grid: &Grid1D, p: &ModelParams) -> Result<f64> {
    contact_diagonal(grid, p.g)?;
    Ok(contact_strength(grid, p) / grid.spacing())
}
