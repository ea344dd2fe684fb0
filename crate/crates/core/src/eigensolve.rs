//! Eigensolvers: dense diagonalisation for 1D operators, symmetry-projected
//! thick-restart Lanczos for the two-atom relative problem, and imaginary-time
//! relaxation followed by a Lanczos polish for the ion frame.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::hamiltonians::{dot, position_tensor, Frame, LinearOperator, OperatorSpec};
use crate::potentials::ModelParams;

/// Eigenvalues closer than this are reported as one degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-9;

// DGKS threshold for a second Gram-Schmidt pass
const REORTH_RATIO: f64 = 0.7071;

/// Real stationary state on a tensor-product grid, normalised to
/// `Σ|ψ|²·ΠΔ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveFn {
    pub frame: Frame,
    pub grids: Vec<Grid1D>,
    pub amplitudes: Vec<f64>,
    /// `+1` for bosonic exchange symmetry, `0` when not applicable.
    pub exchange: i8,
    /// `±1` total parity, `0` when not determined.
    pub parity: i8,
}

impl WaveFn {
    pub fn new(frame: Frame, grids: Vec<Grid1D>, amplitudes: Vec<f64>) -> Result<Self> {
        let size: usize = grids.iter().map(|g| g.len()).product();
        if size != amplitudes.len() {
            return Err(Error::LengthMismatch {
                expected: size,
                got: amplitudes.len(),
            });
        }
        Ok(WaveFn {
            frame,
            grids,
            amplitudes,
            exchange: 0,
            parity: 0,
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.len()).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.grids.iter().map(|g| g.spacing()).product()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>() * self.cell_volume()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sqr().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroNorm("cannot normalise a zero state".into()));
        }
        self.amplitudes.iter_mut().for_each(|a| *a /= n);
        Ok(())
    }

    /// Makes the largest-magnitude amplitude positive.
    pub fn fix_phase(&mut self) {
        fix_phase(&mut self.amplitudes);
    }

    /// Probability density `|ψ|²`.
    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }
}

pub(crate) fn fix_phase(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &a in v.iter() {
        // strict comparison keeps the first index on ties
        if a.abs() > best * (1.0 + 1e-12) {
            best = a.abs();
            sign = a.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

/// Exchange and parity permutations for a row-major tensor grid.
#[derive(Debug, Clone)]
pub struct SymmetryLayout {
    exchange: Option<Vec<u32>>,
    parity: Vec<u32>,
}

impl SymmetryLayout {
    /// `exchange_axes` names two axes of identical grids that hold the atoms.
    pub fn new(grids: &[Grid1D], exchange_axes: Option<(usize, usize)>) -> Result<Self> {
        let shape: Vec<usize> = grids.iter().map(|g| g.len()).collect();
        let strides: Vec<usize> = (0..shape.len())
            .map(|a| shape[a + 1..].iter().product())
            .collect();
        if let Some((a, b)) = exchange_axes {
            if grids[a] != grids[b] {
                return Err(Error::Unsupported(
                    "exchange needs identical atom grids".into(),
                ));
            }
        }
        let parity = position_tensor(grids, |idx| {
            idx.iter()
                .enumerate()
                .map(|(a, &i)| grids[a].mirror_index(i) * strides[a])
                .sum::<usize>() as f64
        });
        let exchange = exchange_axes.map(|(a, b)| {
            position_tensor(grids, |idx| {
                let mut j = idx.to_vec();
                j.swap(a, b);
                j.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>() as f64
            })
            .into_iter()
            .map(|x| x as u32)
            .collect()
        });
        Ok(SymmetryLayout {
            exchange,
            parity: parity.into_iter().map(|x| x as u32).collect(),
        })
    }

    pub fn for_frame(grids: &[Grid1D], frame: Frame) -> Result<Self> {
        let axes = match frame {
            Frame::CmfRelative => Some((0, 1)),
            Frame::IonFrame | Frame::CoupledCmf => Some((1, 2)),
            Frame::SingleParticle | Frame::CmAnalytic => None,
        };
        SymmetryLayout::new(grids, axes)
    }

    pub fn has_exchange(&self) -> bool {
        self.exchange.is_some()
    }

    pub fn exchanged(&self, x: &[f64]) -> Vec<f64> {
        match &self.exchange {
            Some(p) => p.iter().map(|&i| x[i as usize]).collect(),
            None => x.to_vec(),
        }
    }

    pub fn mirrored(&self, x: &[f64]) -> Vec<f64> {
        self.parity.iter().map(|&i| x[i as usize]).collect()
    }

    /// In-place projection onto the bosonic sector with the given parity
    /// (`0` leaves parity unconstrained).
    pub fn project(&self, x: &mut [f64], parity: i8) {
        if let Some(p) = &self.exchange {
            let y: Vec<f64> = p.iter().map(|&i| x[i as usize]).collect();
            for (a, b) in x.iter_mut().zip(&y) {
                *a = 0.5 * (*a + b);
            }
        }
        if parity != 0 {
            let s = parity as f64;
            let y: Vec<f64> = self.parity.iter().map(|&i| x[i as usize]).collect();
            for (a, b) in x.iter_mut().zip(&y) {
                *a = 0.5 * (*a + s * b);
            }
        }
    }

    /// `⟨x|P|x⟩/⟨x|x⟩` for the parity operator.
    pub fn parity_expectation(&self, x: &[f64]) -> f64 {
        let y = self.mirrored(x);
        dot(x, &y) / dot(x, x)
    }
}

/// Symmetrises `ψ` under atom exchange and renormalises it.
pub fn exchange_project(psi: &WaveFn) -> Result<WaveFn> {
    let layout = SymmetryLayout::for_frame(&psi.grids, psi.frame)?;
    if !layout.has_exchange() {
        return Err(Error::Unsupported(format!(
            "frame {} has no identical atom axes",
            psi.frame.tag()
        )));
    }
    let before = psi.norm_sqr();
    let mut out = psi.clone();
    layout.project(&mut out.amplitudes, 0);
    if out.norm_sqr() <= 1e-24 * before.max(1e-300) {
        return Err(Error::ZeroNorm(
            "state is antisymmetric under exchange".into(),
        ));
    }
    out.normalize()?;
    out.exchange = 1;
    Ok(out)
}

/// Full dense diagonalisation of a 1D operator. Orbitals are normalised under
/// grid quadrature and phase-fixed.
pub fn solve_1d(op: &OperatorSpec) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if op.ndim() != 1 {
        return Err(Error::Unsupported(format!(
            "dense solver needs a 1D operator, got {} dimensions",
            op.ndim()
        )));
    }
    let n = op.dim();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        op.apply(&e, &mut col);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = 1.0 / op.cell_volume().sqrt();
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().map(|x| x * scale).collect();
            fix_phase(&mut v);
            v
        })
        .collect();
    Ok((values, vectors))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanczosOptions {
    /// Krylov basis size before a thick restart.
    pub max_basis: usize,
    /// Ritz vectors retained on restart (at least the wanted count).
    pub keep: usize,
    /// Hard cap on operator applications.
    pub max_matvecs: usize,
    /// Residual target `‖Hψ - Eψ‖` for a normalised `ψ`.
    pub tol: f64,
    /// Re-project every new Krylov vector onto the symmetry sector.
    pub project_in_loop: bool,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            max_basis: 64,
            keep: 24,
            max_matvecs: 2000,
            tol: 1e-9,
            project_in_loop: true,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosOutcome {
    pub values: Vec<f64>,
    /// Euclidean-normalised Ritz vectors.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
    pub restarts: usize,
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Lowest `nev` eigenpairs of a real symmetric operator by thick-restart
/// Lanczos with full (twice-iterated Gram-Schmidt) reorthogonalisation.
///
/// `project` maps any vector into the invariant subspace of interest; it is
/// applied to the start vector and, if requested, to every Krylov vector.
pub fn lanczos_lowest(
    op: &dyn LinearOperator,
    start: Vec<f64>,
    nev: usize,
    opts: &LanczosOptions,
    project: &dyn Fn(&mut [f64]),
) -> Result<LanczosOutcome> {
    let n = op.dim();
    if start.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: start.len(),
        });
    }
    let m = opts.max_basis.min(n);
    let keep = opts.keep.max(nev).min(m.saturating_sub(2));
    if nev == 0 || nev >= m {
        return Err(Error::Unsupported(format!(
            "need 0 < nev < basis size, got nev = {nev}, basis = {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = start;
    project(&mut v);
    let nv = norm(&v);
    if !(nv > 0.0) {
        return Err(Error::ZeroNorm("start vector vanishes in the sector".into()));
    }
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut w = vec![0.0; n];
    let mut matvecs = 0usize;
    let mut restarts = 0usize;
    let mut scale = 1.0f64;

    loop {
        let mut beta_last = 0.0;
        let mut residual_vec = Vec::new();
        while basis.len() <= m {
            let j = basis.len() - 1;
            op.apply(&basis[j], &mut w);
            matvecs += 1;
            if opts.project_in_loop {
                project(&mut w);
            }
            // three-term step first, then classical Gram-Schmidt against the
            // whole basis, repeated only when cancellation is severe
            for i in j.saturating_sub(1)..=j {
                let c = dot(&basis[i], &w);
                h[(i, j)] += c;
                axpy(-c, &basis[i], &mut w);
            }
            let mut before = norm(&w);
            let mut b;
            let mut pass = 0;
            loop {
                let coeffs: Vec<f64> = basis.iter().map(|bv| dot(bv, &w)).collect();
                for (i, (bv, &c)) in basis.iter().zip(&coeffs).enumerate() {
                    h[(i, j)] += c;
                    axpy(-c, bv, &mut w);
                }
                b = norm(&w);
                pass += 1;
                if pass >= 3 || b > REORTH_RATIO * before {
                    break;
                }
                before = b;
            }
            scale = scale.max(h[(j, j)].abs());
            if j + 1 == m {
                beta_last = b;
                residual_vec = std::mem::take(&mut w);
                w = vec![0.0; n];
                break;
            }
            if b <= 1e-13 * scale {
                // invariant subspace: continue with a fresh direction
                let mut r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                project(&mut r);
                for _ in 0..2 {
                    for bv in &basis {
                        let c = dot(bv, &r);
                        axpy(-c, bv, &mut r);
                    }
                }
                w = r;
                let nr = norm(&w);
                if !(nr > 0.0) {
                    return Err(Error::ZeroNorm("sector exhausted".into()));
                }
                w.iter_mut().for_each(|x| *x /= nr);
                b = 0.0;
                basis.push(std::mem::replace(&mut w, vec![0.0; n]));
                h[(j + 1, j)] = b;
                continue;
            }
            h[(j + 1, j)] = b;
            let next: Vec<f64> = w.iter().map(|x| x / b).collect();
            basis.push(next);
        }

        let mut hs = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            for i in 0..=j {
                hs[(i, j)] = h[(i, j)];
                hs[(j, i)] = h[(i, j)];
            }
        }
        let eig = SymmetricEigen::new(hs);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let est: Vec<f64> = order
            .iter()
            .map(|&i| beta_last * eig.eigenvectors[(m - 1, i)].abs())
            .collect();
        let converged = est[..nev].iter().all(|&r| r < opts.tol);
        let exhausted = matvecs >= opts.max_matvecs;

        let ritz = |cols: &[usize]| -> Vec<Vec<f64>> {
            cols.iter()
                .map(|&c| {
                    let mut x = vec![0.0; n];
                    for (l, b) in basis.iter().enumerate() {
                        axpy(eig.eigenvectors[(l, c)], b, &mut x);
                    }
                    x
                })
                .collect()
        };

        if converged || exhausted {
            let vectors = ritz(&order[..nev]);
            let mut values = Vec::with_capacity(nev);
            let mut residuals = Vec::with_capacity(nev);
            let mut out = Vec::with_capacity(nev);
            for mut x in vectors {
                let nx = norm(&x);
                x.iter_mut().for_each(|v| *v /= nx);
                op.apply(&x, &mut w);
                let theta = dot(&x, &w);
                axpy(-theta, &x, &mut w);
                values.push(theta);
                residuals.push(norm(&w));
                out.push(x);
            }
            let true_ok = residuals.iter().all(|&r| r < 10.0 * opts.tol);
            if true_ok || exhausted {
                if !true_ok {
                    return Err(Error::NoConvergence {
                        iterations: matvecs,
                        residuals,
                    });
                }
                return Ok(LanczosOutcome {
                    values,
                    vectors: out,
                    residuals,
                    matvecs,
                    restarts,
                });
            }
        }

        // thick restart: keep the lowest Ritz vectors, continue from the residual
        restarts += 1;
        let kept = ritz(&order[..keep]);
        h = DMatrix::<f64>::zeros(m, m);
        for (i, &c) in order[..keep].iter().enumerate() {
            h[(i, i)] = eig.eigenvalues[c];
        }
        basis = kept;
        let mut r = residual_vec;
        for _ in 0..2 {
            for bv in &basis {
                let c = dot(bv, &r);
                axpy(-c, bv, &mut r);
            }
        }
        let nr = norm(&r);
        if nr <= 1e-13 * scale {
            let mut fresh: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            project(&mut fresh);
            for _ in 0..2 {
                for bv in &basis {
                    let c = dot(bv, &fresh);
                    axpy(-c, bv, &mut fresh);
                }
            }
            r = fresh;
        }
        let nr = norm(&r);
        r.iter_mut().for_each(|x| *x /= nr);
        basis.push(r);
    }
}

/// Per-state convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDiagnostics {
    pub residual: f64,
    pub iterations: usize,
}

/// Eigenvalues of one parameter point with symmetry labels and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub params: ModelParams,
    pub frame: Frame,
    pub grids: Vec<Grid1D>,
    pub eigenvalues: Vec<f64>,
    pub parities: Vec<i8>,
    pub diagnostics: Vec<StateDiagnostics>,
    /// Groups of state indices whose energies agree within [`DEGENERACY_TOL`].
    pub clusters: Vec<Vec<usize>>,
}

fn clusters_of(values: &[f64]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(c) if (v - values[*c.last().unwrap()]).abs() < DEGENERACY_TOL => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Deterministic seed: a Gaussian envelope with linear tilts (so both parity
/// sectors are populated) plus a small pseudo-random perturbation.
pub fn seed_vector(grids: &[Grid1D], width: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = grids.iter().map(|g| g.points()).collect();
    let base = position_tensor(grids, |idx| {
        let mut r2 = 0.0;
        let mut tilt = 1.0;
        for (a, &i) in idx.iter().enumerate() {
            let z = pts[a][i];
            r2 += z * z;
            tilt += (a + 1) as f64 * z / width;
        }
        (-r2 / (2.0 * width * width)).exp() * tilt
    });
    base.iter()
        .map(|&b| {
            let env = b.abs().max(1e-300);
            b + 0.2 * env.sqrt() * rng.random_range(-1.0..1.0)
        })
        .collect()
}

/// Solver settings for the two-atom relative problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub lanczos: LanczosOptions,
    /// Residual required of every reported state.
    pub residual_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            lanczos: LanczosOptions::default(),
            residual_tol: 1e-8,
        }
    }
}

fn to_wavefn(op: &OperatorSpec, mut x: Vec<f64>, parity: i8, exchange: i8) -> WaveFn {
    let scale = 1.0 / op.cell_volume().sqrt();
    x.iter_mut().for_each(|v| *v *= scale);
    fix_phase(&mut x);
    WaveFn {
        frame: op.frame(),
        grids: op.grids().to_vec(),
        amplitudes: x,
        exchange,
        parity,
    }
}

/// The `k` lowest bosonic eigenpairs of a two-atom relative operator, taken
/// from both parity sectors, merged and sorted.
pub fn lowest_eigenstates(
    op: &OperatorSpec,
    k: usize,
    opts: &SolverOptions,
) -> Result<(SpectrumRecord, Vec<WaveFn>)> {
    if op.frame() != Frame::CmfRelative || op.ndim() != 2 {
        return Err(Error::Unsupported(
            "lowest_eigenstates needs the two-atom relative operator".into(),
        ));
    }
    if k == 0 || k > 8 {
        return Err(Error::Unsupported(format!("k must be in 1..=8, got {k}")));
    }
    let layout = SymmetryLayout::for_frame(op.grids(), op.frame())?;
    let width = op.params().l_a;
    let mut found: Vec<(f64, i8, Vec<f64>, StateDiagnostics)> = Vec::new();
    for (sector, parity) in [(0u64, 1i8), (1, -1)] {
        let seed = seed_vector(op.grids(), width, opts.lanczos.seed + sector);
        let project = |x: &mut [f64]| layout.project(x, parity);
        let out = lanczos_lowest(op, seed, k, &opts.lanczos, &project)?;
        if let Some(bad) = out.residuals.iter().find(|&&r| r >= opts.residual_tol) {
            return Err(Error::NoConvergence {
                iterations: out.matvecs,
                residuals: vec![*bad],
            });
        }
        for ((e, x), r) in out.values.into_iter().zip(out.vectors).zip(out.residuals) {
            found.push((
                e,
                parity,
                x,
                StateDiagnostics {
                    residual: r,
                    iterations: out.matvecs,
                },
            ));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.truncate(k);
    let eigenvalues: Vec<f64> = found.iter().map(|f| f.0).collect();
    let clusters = clusters_of(&eigenvalues);
    let record = SpectrumRecord {
        params: *op.params(),
        frame: op.frame(),
        grids: op.grids().to_vec(),
        eigenvalues,
        parities: found.iter().map(|f| f.1).collect(),
        diagnostics: found.iter().map(|f| f.3.clone()).collect(),
        clusters,
    };
    let states = found
        .into_iter()
        .map(|(_, parity, x, _)| to_wavefn(op, x, parity, 1))
        .collect();
    Ok((record, states))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImaginaryTimeOptions {
    /// Imaginary-time step in `1/E*`.
    pub step: f64,
    pub max_steps: usize,
    /// Energy is evaluated every this many steps.
    pub check_every: usize,
    /// Relative energy change between checks that ends the relaxation.
    pub energy_tol: f64,
    pub polish: LanczosOptions,
    pub residual_tol: f64,
}

impl Default for ImaginaryTimeOptions {
    fn default() -> Self {
        ImaginaryTimeOptions {
            step: 2e-3,
            max_steps: 5000,
            check_every: 25,
            energy_tol: 1e-7,
            polish: LanczosOptions {
                max_basis: 40,
                keep: 12,
                max_matvecs: 4000,
                tol: 1e-8,
                project_in_loop: true,
                seed: 0x5eed,
            },
            residual_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateReport {
    pub energy: f64,
    pub residual: f64,
    /// `⟨H⟩` sampled along the imaginary-time relaxation.
    pub energy_history: Vec<f64>,
    pub relaxation_steps: usize,
    pub polish_matvecs: usize,
}

/// Imaginary-time relaxation `ψ ← e^{-τV/2} e^{-τT} e^{-τV/2} ψ` with
/// renormalisation, restricted to a symmetry sector.
pub fn imaginary_time_relax(
    op: &OperatorSpec,
    start: Vec<f64>,
    opts: &ImaginaryTimeOptions,
    project: &dyn Fn(&mut [f64]),
) -> (Vec<f64>, Vec<f64>, usize) {
    let tau = opts.step;
    let half_v: Vec<f64> = op.potential().iter().map(|v| (-0.5 * tau * v).exp()).collect();
    let full_t: Vec<f64> = op
        .kinetic_multiplier()
        .iter()
        .map(|t| (-tau * t).exp())
        .collect();
    let engine = op.engine();
    let mut psi = start;
    project(&mut psi);
    let nrm = norm(&psi);
    psi.iter_mut().for_each(|x| *x /= nrm);
    let rayleigh = |x: &[f64]| dot(x, &op.apply_vec(x)) / dot(x, x);
    let mut history = vec![rayleigh(&psi)];
    let mut buf = vec![Complex64::default(); psi.len()];
    let mut steps = 0;
    while steps < opts.max_steps {
        for (b, (p, h)) in buf.iter_mut().zip(psi.iter().zip(&half_v)) {
            *b = Complex64::new(p * h, 0.0);
        }
        engine.forward(&mut buf);
        for (b, t) in buf.iter_mut().zip(&full_t) {
            *b *= t;
        }
        engine.inverse(&mut buf);
        for (p, (b, h)) in psi.iter_mut().zip(buf.iter().zip(&half_v)) {
            *p = b.re * h;
        }
        project(&mut psi);
        let nrm = norm(&psi);
        psi.iter_mut().for_each(|x| *x /= nrm);
        steps += 1;
        if steps % opts.check_every == 0 {
            let e = rayleigh(&psi);
            let prev = *history.last().unwrap();
            history.push(e);
            if (prev - e).abs() <= opts.energy_tol * e.abs().max(1.0) {
                break;
            }
        }
    }
    (psi, history, steps)
}

/// Ground state of the ion-frame operator in the bosonic, even-parity sector.
pub fn ground_state_3d(
    op: &OperatorSpec,
    opts: &ImaginaryTimeOptions,
) -> Result<(WaveFn, GroundStateReport)> {
    if op.frame() != Frame::IonFrame || op.ndim() != 3 {
        return Err(Error::Unsupported(
            "ground_state_3d needs the ion-frame operator".into(),
        ));
    }
    let layout = SymmetryLayout::for_frame(op.grids(), op.frame())?;
    let project = |x: &mut [f64]| layout.project(x, 1);
    let seed = seed_vector(op.grids(), op.params().l_a, opts.polish.seed);
    let (psi, history, steps) = imaginary_time_relax(op, seed, opts, &project);
    let out = lanczos_lowest(op, psi, 1, &opts.polish, &project)?;
    let residual = out.residuals[0];
    if residual >= opts.residual_tol {
        return Err(Error::NoConvergence {
            iterations: steps + out.matvecs,
            residuals: history,
        });
    }
    let energy = out.values[0];
    let x = out.vectors.into_iter().next().unwrap();
    Ok((
        to_wavefn(op, x, 1, 1),
        GroundStateReport {
            energy,
            residual,
            energy_history: history,
            relaxation_steps: steps,
            polish_matvecs: out.matvecs,
        },
    ))
}

/// `‖Hψ - Eψ‖` under grid quadrature for a normalised state.
pub fn residual_norm(op: &OperatorSpec, psi: &WaveFn, energy: f64) -> f64 {
    let mut r = op.apply_vec(&psi.amplitudes);
    axpy(-energy, &psi.amplitudes, &mut r);
    (dot(&r, &r) * op.cell_volume()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::hamiltonians::{
        build_h1b, build_h1b_with, build_if_hamiltonian, build_relative_cmf, TermFlags,
    };
    use crate::potentials::default_params;

    fn oscillator_only() -> TermFlags {
        TermFlags {
            atom_ion: false,
            ..TermFlags::default()
        }
    }

    #[test]
    fn dense_oscillator_levels() {
        let grid = make_grid(4.0, 128).unwrap();
        let op = build_h1b_with(grid, &default_params(), oscillator_only()).unwrap();
        let (e, v) = solve_1d(&op).unwrap();
        for (n, want) in [4.0, 12.0, 20.0, 28.0].iter().enumerate() {
            assert!((e[n] - want).abs() < 1e-9, "level {n}: {}", e[n]);
        }
        // analytic ground orbital (4/π)^{1/4} e^{-2z²} for l_A = 0.5
        let c = (4.0 / std::f64::consts::PI).powf(0.25);
        for (z, a) in grid.points().iter().zip(&v[0]) {
            assert!((a - c * (-2.0 * z * z).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn single_particle_orbitals() {
        let grid = make_grid(4.0, 256).unwrap();
        let (e, v) = solve_1d(&build_h1b(grid, &default_params()).unwrap()).unwrap();
        assert!(e[0] < e[1] && e[1] < 0.0 && 0.0 < e[2] && e[2] < e[3]);
        let h = grid.spacing();
        for a in 0..6 {
            for b in 0..6 {
                let s: f64 = v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum::<f64>() * h;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dense_solver_rejects_2d() {
        let grid = make_grid(4.0, 16).unwrap();
        let op = build_relative_cmf(grid, &default_params()).unwrap();
        assert!(solve_1d(&op).is_err());
    }

    fn product_state(grid: Grid1D, f: impl Fn(f64, f64) -> f64) -> WaveFn {
        let z = grid.points();
        let amps = position_tensor(&[grid, grid], |i| f(z[i[0]], z[i[1]]));
        WaveFn::new(Frame::CmfRelative, vec![grid, grid], amps).unwrap()
    }

    #[test]
    fn exchange_projection() {
        let grid = make_grid(3.0, 32).unwrap();
        let g = |x: f64| (-x * x).exp();
        let mut sym = product_state(grid, |a, b| g(a) * g(b) * (1.0 + a * b));
        sym.normalize().unwrap();
        let out = exchange_project(&sym).unwrap();
        assert_eq!(out.exchange, 1);
        for (a, b) in out.amplitudes.iter().zip(&sym.amplitudes) {
            assert!((a - b).abs() < 1e-12);
        }
        let anti = product_state(grid, |a, b| g(a) * g(b) * (a - b));
        assert!(matches!(exchange_project(&anti), Err(Error::ZeroNorm(_))));
        let mixed = product_state(grid, |a, b| g(a) * g(b) * (1.0 + a));
        let out = exchange_project(&mixed).unwrap();
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        let layout = SymmetryLayout::for_frame(&out.grids, out.frame).unwrap();
        for (a, b) in out.amplitudes.iter().zip(layout.exchanged(&out.amplitudes)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_spectrum_on_small_grid() {
        let grid = make_grid(4.0, 128).unwrap();
        let p = default_params();
        let (eps, _) = solve_1d(&build_h1b(grid, &p).unwrap()).unwrap();
        let op = build_relative_cmf(grid, &p).unwrap();
        let (rec, states) = lowest_eigenstates(&op, 5, &SolverOptions::default()).unwrap();
        let mut want = vec![
            2.0 * eps[0],
            eps[0] + eps[1],
            2.0 * eps[1],
            eps[0] + eps[2],
            eps[0] + eps[3],
        ];
        want.sort_by(f64::total_cmp);
        for (e, w) in rec.eigenvalues.iter().zip(&want) {
            assert!((e - w).abs() < 1e-8, "{e} vs {w}");
        }
        for (i, s) in states.iter().enumerate() {
            assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
            assert!(residual_norm(&op, s, rec.eigenvalues[i]) < 1e-8);
            for t in &states[..i] {
                let ov = dot(&s.amplitudes, &t.amplitudes) * s.cell_volume();
                assert!(ov.abs() < 1e-8);
            }
        }
        assert_eq!(rec.parities, vec![1, -1, 1, 1, -1]);
    }

    #[test]
    fn state_count_and_frame_checks() {
        let grid = make_grid(4.0, 16).unwrap();
        let p = default_params();
        let op = build_relative_cmf(grid, &p).unwrap();
        let opts = SolverOptions::default();
        assert!(lowest_eigenstates(&op, 0, &opts).is_err());
        assert!(lowest_eigenstates(&op, 9, &opts).is_err());
        let h1 = build_h1b(grid, &p).unwrap();
        assert!(lowest_eigenstates(&h1, 1, &opts).is_err());
        assert!(ground_state_3d(&op, &ImaginaryTimeOptions::default()).is_err());
    }

    #[test]
    fn projection_in_loop_matches_seed_only() {
        let grid = make_grid(4.0, 64).unwrap();
        for beta in [0.0, 1.0] {
            let p = default_params().with_g(2.0).with_beta(beta);
            let op = build_relative_cmf(grid, &p).unwrap();
            let layout = SymmetryLayout::for_frame(op.grids(), op.frame()).unwrap();
            let project = |x: &mut [f64]| layout.project(x, 1);
            let seed = seed_vector(op.grids(), 0.5, 7);
            let mut opts = LanczosOptions {
                max_matvecs: 5000,
                ..LanczosOptions::default()
            };
            let a = lanczos_lowest(&op, seed.clone(), 3, &opts, &project).unwrap();
            // without in-loop projection, rounding admits other sectors; keep
            // only the Ritz pairs that carry the requested labels
            opts.project_in_loop = false;
            let b = lanczos_lowest(&op, seed, 12, &opts, &project).unwrap();
            let sector: Vec<f64> = b
                .values
                .iter()
                .zip(&b.vectors)
                .filter(|(_, x)| {
                    let ex = layout.exchanged(x);
                    layout.parity_expectation(x) > 0.999 && dot(x, &ex) > 0.999
                })
                .map(|(e, _)| *e)
                .collect();
            for (x, y) in a.values.iter().zip(&sector) {
                assert!((x - y).abs() < 1e-9, "beta {beta}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn clusters_group_degenerate_values() {
        let c = clusters_of(&[1.0, 1.0 + 1e-12, 2.0, 3.0, 3.0]);
        assert_eq!(c, vec![vec![0, 1], vec![2], vec![3, 4]]);
    }

    #[test]
    fn imaginary_time_energy_decreases() {
        let grid = make_grid(4.0, 64).unwrap();
        let op = build_relative_cmf(grid, &default_params().with_g(1.0)).unwrap();
        let layout = SymmetryLayout::for_frame(op.grids(), op.frame()).unwrap();
        let project = |x: &mut [f64]| layout.project(x, 1);
        let opts = ImaginaryTimeOptions {
            max_steps: 400,
            check_every: 5,
            energy_tol: 0.0,
            ..ImaginaryTimeOptions::default()
        };
        let (_, history, steps) =
            imaginary_time_relax(&op, seed_vector(op.grids(), 0.5, 1), &opts, &project);
        assert_eq!(steps, 400);
        for w in history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn ion_frame_ground_state_is_symmetric() {
        let p = default_params().with_beta(1.0);
        let gi = make_grid(2.0, 16).unwrap();
        let gr = make_grid(2.5, 32).unwrap();
        let op = build_if_hamiltonian(gi, gr, &p).unwrap();
        let (psi, rep) = ground_state_3d(&op, &ImaginaryTimeOptions::default()).unwrap();
        assert!(rep.residual < 1e-7);
        assert!(residual_norm(&op, &psi, rep.energy) < 1e-6);
        let layout = SymmetryLayout::for_frame(op.grids(), op.frame()).unwrap();
        assert!((layout.parity_expectation(&psi.amplitudes) - 1.0).abs() < 1e-8);
        for (a, b) in psi.amplitudes.iter().zip(layout.exchanged(&psi.amplitudes)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn projector_is_idempotent(seed in 0u64..1000, parity in proptest::sample::select(vec![-1i8, 0, 1])) {
            let grid = make_grid(2.0, 16).unwrap();
            let layout = SymmetryLayout::for_frame(&[grid, grid], Frame::CmfRelative).unwrap();
            let mut x = seed_vector(&[grid, grid], 0.7, seed);
            layout.project(&mut x, parity);
            let mut y = x.clone();
            layout.project(&mut y, parity);
            for (a, b) in x.iter().zip(&y) {
                proptest::prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
