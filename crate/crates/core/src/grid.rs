//! Uniform periodic grids with Fourier (FFT) differentiation and rectangle-rule
//! quadrature.
//!
//! A [`Grid1D`] covers `[-L, L)` with `n` equispaced points. Tensor products of
//! such grids are handled by [`SpectralEngine`], which applies diagonal
//! multipliers in wavenumber space along every axis of a row-major array.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid1D {
    extent: f64,
    n: usize,
    spacing: f64,
}

/// Serialised form of a grid: half-width and number of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extent: f64,
    pub points: usize,
}

impl TryFrom<GridSpec> for Grid1D {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        make_grid(s.extent, s.points)
    }
}

impl From<Grid1D> for GridSpec {
    fn from(g: Grid1D) -> Self {
        GridSpec {
            extent: g.extent,
            points: g.n,
        }
    }
}

/// Builds the grid `z_k = -L + k·(2L/n)`, `k = 0..n`.
pub fn make_grid(extent: f64, n: usize) -> Result<Grid1D> {
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "extent must be positive, got {extent}"
        )));
    }
    if n % 2 != 0 {
        return Err(Error::InvalidGrid(format!("odd point count {n}")));
    }
    if n < 8 {
        return Err(Error::InvalidGrid(format!("need at least 8 points, got {n}")));
    }
    Ok(Grid1D {
        extent,
        n,
        spacing: 2.0 * extent / n as f64,
    })
}

impl Grid1D {
    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn point(&self, k: usize) -> f64 {
        -self.extent + k as f64 * self.spacing
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.point(k)).collect()
    }

    /// Positions for terms odd in this coordinate. The edge point `-L` is its
    /// own mirror image on the periodic grid, so it is set to zero there, the
    /// position-space counterpart of dropping the Nyquist wavenumber.
    pub fn odd_points(&self) -> Vec<f64> {
        let mut z = self.points();
        z[0] = 0.0;
        z
    }

    /// Index of the point `z = 0`.
    pub fn origin_index(&self) -> usize {
        self.n / 2
    }

    /// Index of `-z_k` on the periodic grid.
    pub fn mirror_index(&self, k: usize) -> usize {
        (self.n - k) % self.n
    }

    /// Wavenumbers in FFT order. The Nyquist mode carries `-π/Δ`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as isize;
        let dk = PI / self.extent;
        (0..n)
            .map(|j| {
                let m = if j < n / 2 { j } else { j - n };
                m as f64 * dk
            })
            .collect()
    }

    /// Wavenumbers for a first derivative: the Nyquist mode is zeroed so that
    /// real input stays real.
    pub fn derivative_wavenumbers(&self) -> Vec<f64> {
        let mut k = self.wavenumbers();
        k[self.n / 2] = 0.0;
        k
    }

    /// `k_a + k_b` folded back into the Brillouin zone, row-major over the
    /// index pair. The grid conserves total momentum only modulo `2π/Δ`, so
    /// this (not the plain sum) is the momentum a pair interaction sees.
    pub fn pair_wavenumbers(&self) -> Vec<f64> {
        let n = self.n as isize;
        let dk = PI / self.extent;
        let m = |j: usize| {
            let j = j as isize;
            if j < n / 2 {
                j
            } else {
                j - n
            }
        };
        let mut out = Vec::with_capacity(self.n * self.n);
        for a in 0..self.n {
            for b in 0..self.n {
                let s = (m(a) + m(b) + n / 2).rem_euclid(n) - n / 2;
                out.push(s as f64 * dk);
            }
        }
        out
    }

    /// [`Grid1D::pair_wavenumbers`] with the zone boundary zeroed, for terms
    /// odd in the pair momentum.
    pub fn pair_derivative_wavenumbers(&self) -> Vec<f64> {
        let edge = -PI / self.extent * (self.n / 2) as f64;
        self.pair_wavenumbers()
            .into_iter()
            .map(|s| if s == edge { 0.0 } else { s })
            .collect()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: f.len(),
            });
        }
        Ok(())
    }

    /// Rectangle rule `Δ·Σ f(z_k)`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        Ok(self.spacing * f.iter().sum::<f64>())
    }

    pub fn second_derivative(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let engine = SpectralEngine::new(&[*self]);
        let mult: Vec<f64> = self.wavenumbers().iter().map(|k| -k * k).collect();
        let mut out = vec![0.0; self.n];
        engine.apply_multiplier(f, &mult, &mut out);
        Ok(out)
    }

    pub fn first_derivative(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let engine = SpectralEngine::new(&[*self]);
        let k = self.derivative_wavenumbers();
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        engine.forward(&mut buf);
        for (b, &kj) in buf.iter_mut().zip(&k) {
            *b *= Complex64::new(0.0, kj);
        }
        engine.inverse(&mut buf);
        Ok(buf.iter().map(|c| c.re).collect())
    }

    /// Trigonometric interpolant of `f` evaluated at an arbitrary point.
    pub fn bandlimited_eval(&self, coeffs: &[Complex64], z: f64) -> f64 {
        let n = self.n as isize;
        let dk = PI / self.extent;
        let mut acc = 0.0;
        for (j, c) in coeffs.iter().enumerate() {
            let j = j as isize;
            let m = if j < n / 2 { j } else { j - n };
            let w = if j == n / 2 { 0.5 } else { 1.0 };
            if j == n / 2 {
                // split Nyquist symmetrically between ±k
                let phase = (m as f64) * dk * (z + self.extent);
                acc += w * (c * Complex64::new(0.0, phase).exp()).re;
                acc += w * (c * Complex64::new(0.0, -phase).exp()).re;
            } else {
                let phase = (m as f64) * dk * (z + self.extent);
                acc += (c * Complex64::new(0.0, phase).exp()).re;
            }
        }
        acc / self.n as f64
    }

    /// Resamples `f` from this grid onto `target` by trigonometric
    /// interpolation. Target points outside `[-L, L)` receive zero.
    pub fn resample_onto(&self, f: &[f64], target: &Grid1D) -> Result<Vec<f64>> {
        self.check_len(f)?;
        if self == target {
            return Ok(f.to_vec());
        }
        let engine = SpectralEngine::new(&[*self]);
        let mut coeffs: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        engine.forward(&mut coeffs);
        Ok(target
            .points()
            .into_iter()
            .map(|z| {
                if z < -self.extent || z >= self.extent {
                    0.0
                } else {
                    self.bandlimited_eval(&coeffs, z)
                }
            })
            .collect())
    }
}

/// Batched FFTs over every axis of a row-major tensor-product grid.
#[derive(Clone)]
pub struct SpectralEngine {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for SpectralEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralEngine")
            .field("shape", &self.shape)
            .finish()
    }
}

impl SpectralEngine {
    pub fn new(grids: &[Grid1D]) -> Self {
        let mut planner = FftPlanner::new();
        let shape: Vec<usize> = grids.iter().map(|g| g.len()).collect();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        SpectralEngine {
            shape,
            forward,
            inverse,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let ndim = self.shape.len();
        let mut scratch = Vec::new();
        let mut block = Vec::new();
        for axis in 0..ndim {
            let len = self.shape[axis];
            let plan = &plans[axis];
            let need = plan.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::default());
            }
            let inner: usize = self.shape[axis + 1..].iter().product();
            if inner == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            block.resize(len * inner, Complex64::default());
            for chunk in data.chunks_mut(len * inner) {
                // chunk is len x inner; transpose so that the axis is contiguous
                for i in 0..len {
                    let row = &chunk[i * inner..(i + 1) * inner];
                    for (j, &v) in row.iter().enumerate() {
                        block[j * len + i] = v;
                    }
                }
                plan.process_with_scratch(&mut block, &mut scratch);
                for j in 0..inner {
                    let col = &block[j * len..(j + 1) * len];
                    for (i, &v) in col.iter().enumerate() {
                        chunk[i * inner + j] = v;
                    }
                }
            }
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform including the `1/N` normalisation.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.size() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// `out = F⁻¹[mult · F[input]]` for real input and a real multiplier that is
    /// even under `k → -k`.
    pub fn apply_multiplier(&self, input: &[f64], mult: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        for (b, &m) in buf.iter_mut().zip(mult) {
            *b *= m;
        }
        self.inverse(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }

    /// `⟨f| mult |f⟩` evaluated in wavenumber space, normalised so that a
    /// multiplier of one returns `Σ f²`.
    pub fn quadratic_form(&self, f: &[f64], mult: &[f64]) -> f64 {
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        let acc: f64 = buf.iter().zip(mult).map(|(b, &m)| b.norm_sqr() * m).sum();
        acc / self.size() as f64
    }
}

/// Row-major wavenumber tensor: `value(k_0, k_1, ...)` evaluated on every mode.
pub fn wavenumber_tensor(grids: &[Grid1D], value: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    let shape: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let size: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        out.push(value(&idx));
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_wavenumbers_fold_into_the_zone() {
        let grid = make_grid(2.0, 16).unwrap();
        let k = grid.wavenumbers();
        let s = grid.pair_wavenumbers();
        let st = grid.pair_derivative_wavenumbers();
        let period = 2.0 * PI / grid.spacing();
        for a in 0..16 {
            for b in 0..16 {
                let v = s[a * 16 + b];
                assert!(v >= -0.5 * period - 1e-12 && v < 0.5 * period);
                let m = (k[a] + k[b] - v) / period;
                assert!((m - m.round()).abs() < 1e-12);
                if v.abs() < 0.5 * period - 1e-9 {
                    assert_eq!(st[a * 16 + b], v);
                } else {
                    assert_eq!(st[a * 16 + b], 0.0);
                }
            }
        }
        // small momenta are not folded
        assert!((s[16 + 2] - (k[1] + k[2])).abs() < 1e-12);
    }

    #[test]
    fn grid_definition() {
        let g = make_grid(4.0, 8).unwrap();
        assert_eq!(g.points(), vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.spacing(), 1.0);
        let g = make_grid(4.0, 512).unwrap();
        assert_eq!(g.spacing(), 0.015625);
        assert_eq!(g.point(g.origin_index()), 0.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        let err = make_grid(4.0, 7).unwrap_err();
        assert!(err.to_string().contains("odd point count"));
        assert!(make_grid(0.0, 8).is_err());
        assert!(make_grid(-1.0, 8).is_err());
        assert!(make_grid(1.0, 6).is_err());
    }

    #[test]
    fn second_derivative_plane_wave() {
        let g = make_grid(3.0, 64).unwrap();
        let kz = PI / g.extent();
        let f: Vec<f64> = g.points().iter().map(|z| (kz * z).sin()).collect();
        let d2 = g.second_derivative(&f).unwrap();
        for (z, v) in g.points().iter().zip(&d2) {
            assert!((v + kz * kz * (kz * z).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn second_derivative_of_constant_vanishes() {
        let g = make_grid(2.0, 32).unwrap();
        let d2 = g.second_derivative(&vec![1.0; 32]).unwrap();
        assert!(d2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn second_derivative_gaussian_matches_finite_differences() {
        let g = make_grid(8.0, 256).unwrap();
        let h = g.spacing();
        let f: Vec<f64> = g.points().iter().map(|z| (-z * z).exp()).collect();
        let d2 = g.second_derivative(&f).unwrap();
        // central second-order finite differences as an independent reference
        let mut max_dev = 0.0f64;
        for k in 1..g.len() - 1 {
            let fd = (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (h * h);
            max_dev = max_dev.max((fd - d2[k]).abs());
        }
        // the FD truncation error is h²/12·f'''' with max|f''''| = 12
        assert!(max_dev < 1.5 * h * h, "deviation {max_dev}");
        // spectral result agrees with the analytic derivative far better
        for (z, v) in g.points().iter().zip(&d2) {
            let exact = (4.0 * z * z - 2.0) * (-z * z).exp();
            assert!((v - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = make_grid(2.0, 16).unwrap();
        assert!(matches!(
            g.integrate(&[1.0; 8]),
            Err(Error::LengthMismatch { expected: 16, got: 8 })
        ));
        assert!(g.second_derivative(&[0.0; 4]).is_err());
    }

    #[test]
    fn integrate_gaussian_and_odd() {
        let g = make_grid(8.0, 256).unwrap();
        let s = 0.7f64;
        let f: Vec<f64> = g
            .points()
            .iter()
            .map(|z| (-z * z / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
            .collect();
        assert!((g.integrate(&f).unwrap() - 1.0).abs() < 1e-8);
        let odd = g.points();
        // the point -L has no partner on the periodic grid; drop it
        let mut odd = odd.clone();
        odd[0] = 0.0;
        assert!(g.integrate(&odd).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mirror_indices() {
        let g = make_grid(4.0, 8).unwrap();
        for k in 1..8 {
            assert_eq!(g.point(g.mirror_index(k)), -g.point(k));
        }
        assert_eq!(g.mirror_index(0), 0);
    }

    #[test]
    fn parseval() {
        let g = make_grid(5.0, 128).unwrap();
        let f: Vec<f64> = g
            .points()
            .iter()
            .map(|z| (-(z - 0.3).powi(2)).exp() * (3.0 * z).cos())
            .collect();
        let engine = SpectralEngine::new(&[g]);
        let pos: f64 = f.iter().map(|v| v * v).sum::<f64>() * g.spacing();
        let spec = engine.quadratic_form(&f, &vec![1.0; 128]) * g.spacing();
        assert!((pos - spec).abs() < 1e-10);
    }

    #[test]
    fn resample_is_exact_for_bandlimited() {
        let a = make_grid(2.0, 32).unwrap();
        let b = make_grid(2.0, 48).unwrap();
        let kz = 2.0 * PI / 4.0;
        let f: Vec<f64> = a.points().iter().map(|z| (3.0 * kz * z).cos()).collect();
        let r = a.resample_onto(&f, &b).unwrap();
        for (z, v) in b.points().iter().zip(&r) {
            assert!((v - (3.0 * kz * z).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_axis_matches_single_axis() {
        let g0 = make_grid(2.0, 8).unwrap();
        let g1 = make_grid(3.0, 16).unwrap();
        let engine = SpectralEngine::new(&[g0, g1]);
        let k1 = g1.wavenumbers();
        let mult = wavenumber_tensor(&[g0, g1], |i| -k1[i[1]] * k1[i[1]]);
        let f: Vec<f64> = (0..8 * 16).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let mut out = vec![0.0; f.len()];
        engine.apply_multiplier(&f, &mult, &mut out);
        for row in 0..8 {
            let d2 = g1.second_derivative(&f[row * 16..(row + 1) * 16]).unwrap();
            for j in 0..16 {
                assert!((d2[j] - out[row * 16 + j]).abs() < 1e-10);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn second_derivative_is_linear(
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                f in proptest::collection::vec(-1.0f64..1.0, 32),
                h in proptest::collection::vec(-1.0f64..1.0, 32),
            ) {
                let g = make_grid(2.0, 32).unwrap();
                let comb: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
                let lhs = g.second_derivative(&comb).unwrap();
                let df = g.second_derivative(&f).unwrap();
                let dh = g.second_derivative(&h).unwrap();
                let scale = 1.0 + df.iter().chain(&dh).fold(0.0f64, |m, v| m.max(v.abs()));
                for i in 0..32 {
                    prop_assert!((lhs[i] - (a * df[i] + b * dh[i])).abs() < 1e-12 * scale * 10.0);
                }
            }
        
            #[test]
            fn parseval_holds_for_random_samples(f in proptest::collection::vec(-1.0f64..1.0, 48)) {
                let g = make_grid(3.0, 48).unwrap();
                let engine = SpectralEngine::new(&[g]);
                let pos: f64 = f.iter().map(|v| v * v).sum::<f64>() * g.spacing();
                let spec = engine.quadratic_form(&f, &[1.0; 48]) * g.spacing();
                prop_assert!((pos - spec).abs() < 1e-10 * pos.max(1.0));
            }
        }
    }
}
