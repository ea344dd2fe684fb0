//! Observables of two-atom eigenstates: two-body and separation densities,
//! mean separations, bunching, laboratory-frame energy components, number
//! state overlaps, fidelities and the laboratory one-body densities that the
//! ion frame gives access to.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::eigensolve::WaveFn;
use crate::error::{Error, Result};
use crate::grid::{wavenumber_tensor, Grid1D, SpectralEngine};
use crate::hamiltonians::{cm_solution, Frame};
use crate::potentials::{
    atom_ion_potential, contact_strength, contact_strength_slope, ModelParams,
};

const NORM_TOL: f64 = 1e-6;

/// `ρ₂(r, r')` on a square grid, row-major in `(r, r')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyDensity {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl TwoBodyDensity {
    pub fn total(&self) -> f64 {
        let h = self.grid.spacing();
        self.values.iter().sum::<f64>() * h * h
    }

    fn check_normalised(&self) -> Result<()> {
        let t = self.total();
        if (t - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalised(t));
        }
        Ok(())
    }

    fn check_square(&self) -> Result<()> {
        let n = self.grid.len();
        if self.values.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparationKind {
    AtomAtom,
    AtomIon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationDist {
    pub kind: SeparationKind,
    pub axis: Vec<f64>,
    pub density: Vec<f64>,
}

impl SeparationDist {
    pub fn spacing(&self) -> f64 {
        self.axis[1] - self.axis[0]
    }

    pub fn total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.spacing()
    }

    pub fn mean_abs(&self) -> f64 {
        self.axis
            .iter()
            .zip(&self.density)
            .map(|(x, p)| x.abs() * p)
            .sum::<f64>()
            * self.spacing()
    }
}

/// `|ψ(r, r')|²` for a relative-frame two-atom state.
pub fn two_body_density(psi: &WaveFn) -> Result<TwoBodyDensity> {
    match psi.frame {
        Frame::CmfRelative => {
            if psi.grids.len() != 2 || psi.grids[0] != psi.grids[1] {
                return Err(Error::FrameMismatch("expected a square two-atom grid".into()));
            }
            Ok(TwoBodyDensity {
                grid: psi.grids[0],
                values: psi.density(),
            })
        }
        Frame::IonFrame => two_body_density_if(psi),
        other => Err(Error::FrameMismatch(format!(
            "no two-body density for frame {}",
            other.tag()
        ))),
    }
}

/// Ion-frame two-body density with the ion coordinate integrated out.
pub fn two_body_density_if(psi: &WaveFn) -> Result<TwoBodyDensity> {
    if psi.frame != Frame::IonFrame || psi.grids.len() != 3 {
        return Err(Error::FrameMismatch("expected an ion-frame state".into()));
    }
    let ni = psi.grids[0].len();
    let nr = psi.grids[1].len();
    let hi = psi.grids[0].spacing();
    let mut values = vec![0.0; nr * nr];
    for a in 0..ni {
        let block = &psi.amplitudes[a * nr * nr..(a + 1) * nr * nr];
        for (v, x) in values.iter_mut().zip(block) {
            *v += x * x * hi;
        }
    }
    Ok(TwoBodyDensity {
        grid: psi.grids[1],
        values,
    })
}

/// `ρ₁^AA(X) = ∫dY ρ₂(Y + X/2, Y - X/2)` on `X = mΔ`.
///
/// With `ΔX = Δ` every point of the rotated `(X, Y)` lattice with `ΔY = Δ` is
/// a node of the original grid, so the resampling is exact: each value is a
/// sum along one diagonal `r - r' = X`.
pub fn interatomic_separation_dist(rho2: &TwoBodyDensity) -> Result<SeparationDist> {
    rho2.check_square()?;
    let n = rho2.grid.len();
    let h = rho2.grid.spacing();
    let mut axis = Vec::with_capacity(2 * n - 1);
    let mut density = Vec::with_capacity(2 * n - 1);
    for m in -(n as isize - 1)..=(n as isize - 1) {
        let mut acc = 0.0;
        for i in 0..n as isize {
            let j = i - m;
            if j >= 0 && j < n as isize {
                acc += rho2.values[i as usize * n + j as usize];
            }
        }
        axis.push(m as f64 * h);
        density.push(acc * h);
    }
    Ok(SeparationDist {
        kind: SeparationKind::AtomAtom,
        axis,
        density,
    })
}

/// `ρ₁(r) = ∫dr' ρ₂(r, r')`, the atom-ion separation distribution.
pub fn atom_ion_separation_dist(rho2: &TwoBodyDensity) -> Result<SeparationDist> {
    rho2.check_square()?;
    let n = rho2.grid.len();
    let h = rho2.grid.spacing();
    let density = (0..n)
        .map(|i| rho2.values[i * n..(i + 1) * n].iter().sum::<f64>() * h)
        .collect();
    Ok(SeparationDist {
        kind: SeparationKind::AtomIon,
        axis: rho2.grid.points(),
        density,
    })
}

/// Mean atom-atom and atom-ion separations `(⟨d_AA⟩, ⟨d_AI⟩)`.
pub fn mean_separations(rho2: &TwoBodyDensity) -> Result<(f64, f64)> {
    rho2.check_square()?;
    rho2.check_normalised()?;
    let d_aa = interatomic_separation_dist(rho2)?.mean_abs();
    let d_ai = atom_ion_separation_dist(rho2)?.mean_abs();
    Ok((d_aa, d_ai))
}

/// Probability that both atoms sit on the same side of the ion. Points with
/// `r = 0` count half towards either side.
pub fn bunching_probability(rho2: &TwoBodyDensity) -> Result<f64> {
    rho2.check_square()?;
    let n = rho2.grid.len();
    let h = rho2.grid.spacing();
    let side = |z: f64| -> (f64, f64) {
        if z < 0.0 {
            (1.0, 0.0)
        } else if z > 0.0 {
            (0.0, 1.0)
        } else {
            (0.5, 0.5)
        }
    };
    let s: Vec<(f64, f64)> = rho2.grid.points().into_iter().map(side).collect();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += rho2.values[i * n + j] * (s[i].0 * s[j].0 + s[i].1 * s[j].1);
        }
    }
    Ok(acc * h * h)
}

/// `⟨∂H/∂g⟩`, the contact density that enters the Hellmann-Feynman relation
/// `dE/dg = ⟨∂H/∂g⟩`. For the bare scheme this is the lattice `⟨δ(r_1 - r_2)⟩`.
pub fn contact_density(psi: &WaveFn, p: &ModelParams) -> Result<f64> {
    let (grid, blocks) = atom_blocks(psi)?;
    let n = grid.len();
    let w = psi.cell_volume() / grid.spacing();
    let lattice: f64 = blocks
        .map(|b| (0..n).map(|i| b[i * n + i].powi(2)).sum::<f64>())
        .sum::<f64>()
        * w;
    Ok(lattice * contact_strength_slope(&grid, p))
}

fn atom_blocks(psi: &WaveFn) -> Result<(Grid1D, std::slice::Chunks<'_, f64>)> {
    let grid = match psi.frame {
        Frame::CmfRelative => psi.grids[0],
        Frame::IonFrame => psi.grids[1],
        other => {
            return Err(Error::FrameMismatch(format!(
                "frame {} has no atom pair",
                other.tag()
            )))
        }
    };
    let n = grid.len();
    Ok((grid, psi.amplitudes.chunks(n * n)))
}

/// Laboratory-frame energy components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub k_a: f64,
    pub p_a: f64,
    pub v_aa: f64,
    pub v_ai: f64,
    pub k_i: f64,
    pub p_i: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn from_parts(k_a: f64, p_a: f64, v_aa: f64, v_ai: f64, k_i: f64, p_i: f64) -> Self {
        EnergyBreakdown {
            k_a,
            p_a,
            v_aa,
            v_ai,
            k_i,
            p_i,
            total: k_a + p_a + v_aa + v_ai + k_i + p_i,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("K_A", self.k_a),
            ("P_A", self.p_a),
            ("V_AA", self.v_aa),
            ("V_AI", self.v_ai),
            ("K_I", self.k_i),
            ("P_I", self.p_i),
        ]
    }
}

/// Position-space moments shared by both routes. `s2` is `⟨(r_1 + r_2)²⟩`
/// with the cross term written in the odd-term positions of the operators.
struct PairMoments {
    sum_r2: f64,
    s2: f64,
    v_ai: f64,
    /// `⟨V_AA⟩` under the configured contact scheme.
    v_aa: f64,
}

fn pair_moments(psi: &WaveFn, grid: &Grid1D, p: &ModelParams) -> PairMoments {
    let n = grid.len();
    let z = grid.points();
    let zt = grid.odd_points();
    let v: Vec<f64> = z.iter().map(|&r| atom_ion_potential(r, p)).collect();
    let w = psi.cell_volume();
    let (mut sum_r2, mut s2, mut v_ai, mut contact) = (0.0, 0.0, 0.0, 0.0);
    for block in psi.amplitudes.chunks(n * n) {
        for i in 0..n {
            for j in 0..n {
                let rho = block[i * n + j].powi(2);
                sum_r2 += rho * (z[i] * z[i] + z[j] * z[j]);
                s2 += rho * (z[i] * z[i] + z[j] * z[j] + 2.0 * zt[i] * zt[j]);
                v_ai += rho * (v[i] + v[j]);
            }
            contact += block[i * n + i].powi(2);
        }
    }
    PairMoments {
        sum_r2: sum_r2 * w,
        s2: s2 * w,
        v_ai: v_ai * w,
        v_aa: contact * w * contact_strength(grid, p) / grid.spacing(),
    }
}

/// Laboratory-frame components of a relative-frame eigenstate. For a mobile
/// ion the centre-of-mass ground state is folded in analytically; for a static
/// ion `K_I = P_I = 0` and the relative coordinates are the atom positions.
pub fn lab_energy_components(psi_rel: &WaveFn, p: &ModelParams) -> Result<EnergyBreakdown> {
    if psi_rel.frame != Frame::CmfRelative {
        return Err(Error::FrameMismatch(
            "expected a relative-frame state".into(),
        ));
    }
    if p.beta > 0.0 && p.eta != 1.0 {
        return Err(Error::Unsupported(format!(
            "coupled CM not supported (eta = {})",
            p.eta
        )));
    }
    let grid = psi_rel.grids[0];
    let grids = [grid, grid];
    let k = grid.wavenumbers();
    let engine = SpectralEngine::new(&grids);
    let w = psi_rel.cell_volume();
    let lap = wavenumber_tensor(&grids, |i| k[i[0]] * k[i[0]] + k[i[1]] * k[i[1]]);
    let kin_rel = engine.quadratic_form(&psi_rel.amplitudes, &lap) * w;
    let m = pair_moments(psi_rel, &grid, p);
    let curv = p.trap_curvature();
    let v_aa = m.v_aa;

    if p.beta == 0.0 {
        return Ok(EnergyBreakdown::from_parts(
            kin_rel,
            m.sum_r2 * curv,
            v_aa,
            m.v_ai,
            0.0,
            0.0,
        ));
    }

    let beta = p.beta;
    let d = p.d();
    let n = p.n_atoms as f64;
    let cm = cm_solution(p)?;
    // -β(Σ∂_i)² with the folded pair momentum of the operator
    let s = grid.pair_wavenumbers();
    let ion_rel_mult = wavenumber_tensor(&grids, |i| {
        let kp = s[i[0] * grid.len() + i[1]];
        beta * kp * kp
    });
    let ion_rel = engine.quadratic_form(&psi_rel.amplitudes, &ion_rel_mult) * w;
    let k_a = kin_rel + n * d * d * cm.mean_neg_d2;
    let k_i = ion_rel + beta * (1.0 - n * d).powi(2) * cm.mean_neg_d2;
    let p_a = (n * cm.mean_r2 + m.sum_r2 + (n * d * d - 2.0 * d) * m.s2) * curv;
    let p_i = (cm.mean_r2 + d * d * m.s2) * curv / (beta * p.eta * p.eta);
    Ok(EnergyBreakdown::from_parts(k_a, p_a, v_aa, m.v_ai, k_i, p_i))
}

/// Laboratory-frame components evaluated directly on an ion-frame state.
pub fn lab_energy_components_if(psi: &WaveFn, p: &ModelParams) -> Result<EnergyBreakdown> {
    if psi.frame != Frame::IonFrame || psi.grids.len() != 3 {
        return Err(Error::FrameMismatch("expected an ion-frame state".into()));
    }
    let (gi, gr) = (psi.grids[0], psi.grids[1]);
    let grids = psi.grids.clone();
    let ki = gi.wavenumbers();
    let kit = gi.derivative_wavenumbers();
    let kr = gr.wavenumbers();
    let s = gr.pair_wavenumbers();
    let st = gr.pair_derivative_wavenumbers();
    let nr = gr.len();
    let beta = p.beta;
    let engine = SpectralEngine::new(&grids);
    let w = psi.cell_volume();
    let atom_mult = wavenumber_tensor(&grids, |i| kr[i[1]] * kr[i[1]] + kr[i[2]] * kr[i[2]]);
    // -β(∂_I - Σ∂_i)², with the conventions of the ion-frame operator
    let ion_mult = wavenumber_tensor(&grids, |i| {
        let kp = s[i[1] * nr + i[2]];
        beta * (ki[i[0]] * ki[i[0]] + kp * kp) - 2.0 * beta * kit[i[0]] * st[i[1] * nr + i[2]]
    });
    let k_a = engine.quadratic_form(&psi.amplitudes, &atom_mult) * w;
    let k_i = engine.quadratic_form(&psi.amplitudes, &ion_mult) * w;
    let zi = gi.points();
    let zr = gr.points();
    let zit = gi.odd_points();
    let zrt = gr.odd_points();
    // (z_I + r)² with the cross term in odd-term positions
    let lab2 = |a: usize, b: usize| zi[a] * zi[a] + zr[b] * zr[b] + 2.0 * zit[a] * zrt[b];
    let (mut p_a, mut zi2) = (0.0, 0.0);
    for (a, block) in psi.amplitudes.chunks(nr * nr).enumerate() {
        for b in 0..nr {
            for c in 0..nr {
                let rho = block[b * nr + c].powi(2);
                p_a += rho * (lab2(a, b) + lab2(a, c));
                zi2 += rho * zi[a] * zi[a];
            }
        }
    }
    let curv = p.trap_curvature();
    let m = pair_moments(psi, &gr, p);
    Ok(EnergyBreakdown::from_parts(
        k_a,
        p_a * w * curv,
        m.v_aa,
        m.v_ai,
        k_i,
        zi2 * w * curv / (beta * p.eta * p.eta),
    ))
}

/// Occupations `(n_0, n_1, n_2, n_3)` of the four lowest single-particle
/// orbitals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NumberState(pub [u8; 4]);

impl fmt::Display for NumberState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "|{a},{b},{c},{d}>")
    }
}

impl NumberState {
    /// All two-boson number states over four orbitals, in a fixed order.
    pub fn two_boson_basis() -> Vec<NumberState> {
        let mut out = Vec::new();
        for a in 0..4 {
            for b in a..4 {
                let mut occ = [0u8; 4];
                occ[a] += 1;
                occ[b] += 1;
                out.push(NumberState(occ));
            }
        }
        out
    }

    fn orbitals(&self) -> (usize, usize) {
        let mut idx = Vec::new();
        for (i, &n) in self.0.iter().enumerate() {
            for _ in 0..n {
                idx.push(i);
            }
        }
        (idx[0], idx[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpectrum {
    pub entries: Vec<(NumberState, f64)>,
}

impl OverlapSpectrum {
    pub fn weight(&self, state: [u8; 4]) -> Option<f64> {
        self.entries
            .iter()
            .find(|(s, _)| s.0 == state)
            .map(|(_, w)| *w)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }
}

/// Weights `|⟨n|ψ⟩|²` on the symmetrised number states built from the first
/// four orbitals.
pub fn number_state_overlaps(psi: &WaveFn, orbitals: &[Vec<f64>]) -> Result<OverlapSpectrum> {
    if psi.frame != Frame::CmfRelative {
        return Err(Error::FrameMismatch(
            "expected a relative-frame state".into(),
        ));
    }
    if orbitals.len() < 4 {
        return Err(Error::Unsupported(format!(
            "need four orbitals, got {}",
            orbitals.len()
        )));
    }
    let grid = psi.grids[0];
    let n = grid.len();
    let h = grid.spacing();
    let orb = &orbitals[..4];
    let mut worst = 0.0f64;
    for (a, fa) in orb.iter().enumerate() {
        if fa.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: fa.len(),
            });
        }
        for (b, fb) in orb.iter().enumerate() {
            let g: f64 = fa.iter().zip(fb).map(|(x, y)| x * y).sum::<f64>() * h;
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    if worst > 1e-8 {
        return Err(Error::NotOrthonormal(worst));
    }
    // t[b][i] = Σ_j ψ(i, j) φ_b(j)
    let t: Vec<Vec<f64>> = orb
        .iter()
        .map(|fb| {
            (0..n)
                .map(|i| {
                    psi.amplitudes[i * n..(i + 1) * n]
                        .iter()
                        .zip(fb)
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let m = |a: usize, b: usize| -> f64 {
        orb[a].iter().zip(&t[b]).map(|(x, y)| x * y).sum::<f64>() * h * h
    };
    let entries = NumberState::two_boson_basis()
        .into_iter()
        .map(|s| {
            let (a, b) = s.orbitals();
            let amp = if a == b {
                m(a, a)
            } else {
                FRAC_1_SQRT_2 * (m(a, b) + m(b, a))
            };
            (s, amp * amp)
        })
        .collect();
    Ok(OverlapSpectrum { entries })
}

/// Uhlmann fidelity of two pure states, `|⟨χ|ψ⟩|²`.
pub fn fidelity(psi: &WaveFn, chi: &WaveFn) -> Result<f64> {
    if psi.frame != chi.frame {
        return Err(Error::FrameMismatch(format!(
            "{} vs {}",
            psi.frame.tag(),
            chi.frame.tag()
        )));
    }
    if psi.grids != chi.grids {
        return Err(Error::FrameMismatch("states live on different grids".into()));
    }
    let ov: f64 = psi
        .amplitudes
        .iter()
        .zip(&chi.amplitudes)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * psi.cell_volume();
    Ok(ov * ov)
}

/// Laboratory one-body densities from an ion-frame state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabDensities {
    pub atom_grid: Grid1D,
    pub atom: Vec<f64>,
    pub ion_grid: Grid1D,
    pub ion: Vec<f64>,
}

/// Largest density tolerated on the edge of the relative grid before shifted
/// lookups that leave it are treated as an error.
pub const BOUNDARY_DENSITY_TOL: f64 = 1e-8;

/// `ρ₁(z_I)` and `ρ₁(z_A)`; the atom density is evaluated on the relative grid
/// by linearly interpolating the atom-ion marginal at `z_A - z_I`.
pub fn lab_densities_from_if(psi: &WaveFn) -> Result<LabDensities> {
    if psi.frame != Frame::IonFrame || psi.grids.len() != 3 {
        return Err(Error::FrameMismatch("expected an ion-frame state".into()));
    }
    let (gi, gr) = (psi.grids[0], psi.grids[1]);
    let (ni, nr) = (gi.len(), gr.len());
    let (hi, hr) = (gi.spacing(), gr.spacing());
    // marginal[a][b] = ∫dr' |ψ(z_a, r_b, r')|²
    let mut marginal = vec![vec![0.0; nr]; ni];
    let mut ion = vec![0.0; ni];
    for (a, block) in psi.amplitudes.chunks(nr * nr).enumerate() {
        for b in 0..nr {
            let s: f64 = block[b * nr..(b + 1) * nr].iter().map(|x| x * x).sum();
            marginal[a][b] = s * hr;
        }
        ion[a] = marginal[a].iter().sum::<f64>() * hr;
    }
    let edge = marginal
        .iter()
        .map(|m| m[0].max(m[nr - 1]))
        .fold(0.0, f64::max);
    let zi = gi.points();
    let za = gr.points();
    let mut atom = vec![0.0; nr];
    let mut leaked = false;
    for (k, &z) in za.iter().enumerate() {
        let mut acc = 0.0;
        for a in 0..ni {
            let u = (z - zi[a] + gr.extent()) / hr;
            let i = u.floor();
            let f = u - i;
            let i = i as isize;
            let at = |j: isize| -> Option<f64> {
                if j >= 0 && (j as usize) < nr {
                    Some(marginal[a][j as usize])
                } else {
                    None
                }
            };
            let lo = at(i);
            let hi_v = at(i + 1);
            if lo.is_none() || (hi_v.is_none() && f > 0.0) {
                leaked = true;
            }
            acc += (1.0 - f) * lo.unwrap_or(0.0) + f * hi_v.unwrap_or(0.0);
        }
        atom[k] = acc * hi;
    }
    if leaked && edge >= BOUNDARY_DENSITY_TOL {
        return Err(Error::BoundaryLeak(format!(
            "relative-coordinate density {edge:.3e} at the grid edge; enlarge the relative grid"
        )));
    }
    Ok(LabDensities {
        atom_grid: gr,
        atom,
        ion_grid: gi,
        ion,
    })
}
