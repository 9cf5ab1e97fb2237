//! Periodic grid fields stored as spectral coefficients, with exact spectral
//! differential operators, dealiased products, off-grid evaluation by direct
//! mode summation, and grid norms.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::torus::{Dim, TorusPoint};
use num_complex::Complex;
use rustfft::FftPlanner;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Uniform lattice on [0,1)^d with m nodes per dimension (m a power of two).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicGrid {
    dim: Dim,
    m: usize,
}

impl PeriodicGrid {
    pub fn new(dim: Dim, m: usize) -> Result<Self> {
        if m < 8 || !m.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size must be a power of two >= 8, got {m}"
            )));
        }
        Ok(PeriodicGrid { dim, m })
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m.pow(self.dim.as_usize() as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed mode number for storage index i along one axis.
    #[inline]
    pub fn mode(&self, i: usize) -> i64 {
        if i < self.m / 2 {
            i as i64
        } else {
            i as i64 - self.m as i64
        }
    }

    /// Physical node coordinate along one axis.
    #[inline]
    pub fn node<T: Real>(&self, i: usize) -> T {
        lit::<T>(i as f64 / self.m as f64)
    }

    fn strides(&self) -> [usize; 3] {
        match self.dim {
            Dim::Two => [self.m, 1, 0],
            Dim::Three => [self.m * self.m, self.m, 1],
        }
    }
}

fn fft_all_axes<T: Real>(grid: &PeriodicGrid, data: &mut [Complex<T>], forward: bool) {
    let m = grid.m;
    let mut planner = FftPlanner::<T>::new();
    let fft = if forward { planner.plan_fft_forward(m) } else { planner.plan_fft_inverse(m) };
    let d = grid.dim.as_usize();
    let strides = grid.strides();
    let mut scratch = vec![Complex { re: T::zero(), im: T::zero() }; m];
    for axis in 0..d {
        let stride = strides[axis];
        let lines = grid.len() / m;
        for line in 0..lines {
            // base offset of this line: distribute the non-axis indices
            let mut rem = line;
            let mut base = 0usize;
            for other in 0..d {
                if other == axis {
                    continue;
                }
                let idx = rem % m;
                rem /= m;
                base += idx * strides[other];
            }
            if stride == 1 {
                fft.process(&mut data[base..base + m]);
            } else {
                for j in 0..m {
                    scratch[j] = data[base + j * stride];
                }
                fft.process(&mut scratch);
                for j in 0..m {
                    data[base + j * stride] = scratch[j];
                }
            }
        }
    }
}

/// Real-valued periodic field stored as complex spectral coefficients with
/// Hermitian symmetry. Immutable value semantics: operators return new
/// fields.
#[derive(Clone, Debug)]
pub struct ScalarField<T> {
    grid: PeriodicGrid,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        ScalarField { grid, coeffs: vec![Complex { re: T::zero(), im: T::zero() }; grid.len()] }
    }

    pub fn constant(grid: PeriodicGrid, value: T) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = Complex { re: value, im: T::zero() };
        f
    }

    /// Transform physical samples (row-major over the lattice) to spectral
    /// coefficients.
    pub fn from_samples(grid: PeriodicGrid, samples: &[T]) -> Self {
        assert_eq!(samples.len(), grid.len());
        let mut coeffs: Vec<Complex<T>> =
            samples.iter().map(|&s| Complex { re: s, im: T::zero() }).collect();
        fft_all_axes(&grid, &mut coeffs, true);
        let scale = T::one() / lit::<T>(grid.len() as f64);
        for c in &mut coeffs {
            *c = *c * scale;
        }
        ScalarField { grid, coeffs }
    }

    /// Sample a function of the node coordinates.
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(&[T]) -> T) -> Self {
        let d = grid.dim.as_usize();
        let m = grid.m;
        let mut samples = Vec::with_capacity(grid.len());
        let mut idx = vec![0usize; d];
        for flat in 0..grid.len() {
            let mut rem = flat;
            for ax in (0..d).rev() {
                idx[ax] = rem % m;
                rem /= m;
            }
            let x: Vec<T> = idx.iter().map(|&i| grid.node(i)).collect();
            samples.push(f(&x));
        }
        Self::from_samples(grid, &samples)
    }

    /// Build directly from a mode map (must respect Hermitian symmetry).
    pub fn from_modes(grid: PeriodicGrid, f: impl Fn(&[i64]) -> Complex<T>) -> Self {
        let mut field = Self::zeros(grid);
        let d = grid.dim.as_usize();
        let m = grid.m;
        for flat in 0..grid.len() {
            let mut rem = flat;
            let mut k = [0i64; 3];
            for ax in (0..d).rev() {
                k[ax] = grid.mode(rem % m);
                rem /= m;
            }
            field.coeffs[flat] = f(&k[..d]);
        }
        field
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    /// Mode numbers of a flat storage index.
    #[inline]
    pub fn modes_of(&self, flat: usize) -> [i64; 3] {
        let d = self.grid.dim.as_usize();
        let m = self.grid.m;
        let mut rem = flat;
        let mut k = [0i64; 3];
        for ax in (0..d).rev() {
            k[ax] = self.grid.mode(rem % m);
            rem /= m;
        }
        k
    }

    /// Mean value (the k = 0 coefficient).
    pub fn mean(&self) -> T {
        self.coeffs[0].re
    }

    pub fn set_mean(&mut self, value: T) {
        self.coeffs[0] = Complex { re: value, im: T::zero() };
    }

    /// Inverse transform to physical samples.
    pub fn to_samples(&self) -> Vec<T> {
        let mut data = self.coeffs.clone();
        fft_all_axes(&self.grid, &mut data, false);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Physical samples on a `factor`-times finer grid (spectral zero
    /// padding; Nyquist lanes split symmetrically to preserve realness).
    pub fn to_samples_oversampled(&self, factor: usize) -> (PeriodicGrid, Vec<T>) {
        assert!(factor.is_power_of_two() && factor >= 1);
        if factor == 1 {
            return (self.grid, self.to_samples());
        }
        let big = PeriodicGrid::new(self.grid.dim, self.grid.m * factor).unwrap();
        let mut coeffs = vec![Complex { re: T::zero(), im: T::zero() }; big.len()];
        let d = self.grid.dim.as_usize();
        let half = T::from_f64(0.5).unwrap();
        let nyq = -((self.grid.m as i64) / 2);
        for flat in 0..self.grid.len() {
            let k = self.modes_of(flat);
            // distribute Nyquist lanes over +-m/2 in the big grid
            let mut targets: Vec<([i64; 3], T)> = vec![(k, T::one())];
            for ax in 0..d {
                if k[ax] == nyq {
                    let mut next = Vec::with_capacity(targets.len() * 2);
                    for (kk, w) in targets {
                        let mut kp = kk;
                        kp[ax] = -nyq;
                        next.push((kk, w * half));
                        next.push((kp, w * half));
                    }
                    targets = next;
                }
            }
            for (kk, w) in targets {
                let mut idx = 0usize;
                for ax in 0..d {
                    let i = kk[ax].rem_euclid(big.m as i64) as usize;
                    idx = idx * big.m + i;
                }
                coeffs[idx] = coeffs[idx] + self.coeffs[flat] * w;
            }
        }
        fft_all_axes(&big, &mut coeffs, false);
        (big, coeffs.into_iter().map(|c| c.re).collect())
    }

    /// Project onto another grid mode-by-mode (zero-padding or truncating
    /// the spectrum); exact for band-limited fields.
    pub fn resampled(&self, grid: PeriodicGrid) -> Self {
        assert_eq!(self.grid.dim, grid.dim);
        if self.grid == grid {
            return self.clone();
        }
        let src_m = self.grid.m as i64;
        let d = self.grid.dim.as_usize();
        ScalarField::from_modes(grid, |k| {
            if k.iter().any(|&kc| kc < -src_m / 2 || kc >= src_m / 2) {
                return Complex { re: T::zero(), im: T::zero() };
            }
            let mut flat = 0usize;
            for ax in 0..d {
                flat = flat * self.grid.m + k[ax].rem_euclid(src_m) as usize;
            }
            self.coeffs[flat]
        })
    }

    fn map_modes(&self, f: impl Fn(&[i64], Complex<T>) -> Complex<T>) -> Self {
        let d = self.grid.dim.as_usize();
        let mut out = Self::zeros(self.grid);
        for flat in 0..self.grid.len() {
            let k = self.modes_of(flat);
            out.coeffs[flat] = f(&k[..d], self.coeffs[flat]);
        }
        out
    }

    /// Spectral gradient. Nyquist lanes are zeroed to preserve realness.
    pub fn gradient(&self) -> VectorField<T> {
        let d = self.grid_d();
        let m = self.grid.m as i64;
        let two_pi = lit::<T>(2.0) * T::PI();
        let comps = (0..d)
            .map(|ax| {
                self.map_modes(|k, c| {
                    if k.iter().any(|&kc| kc == -m / 2) {
                        Complex { re: T::zero(), im: T::zero() }
                    } else {
                        Complex { re: T::zero(), im: two_pi * lit::<T>(k[ax] as f64) } * c
                    }
                })
            })
            .collect();
        VectorField { components: comps }
    }

    #[inline]
    fn grid_d(&self) -> usize {
        self.grid.dim.as_usize()
    }

    /// Solve -lap u = f - mean(f) spectrally; output has zero mean.
    pub fn inverse_laplacian(&self) -> Self {
        let four_pi2 = lit::<T>(4.0) * T::PI() * T::PI();
        self.map_modes(|k, c| {
            let k2: i64 = k.iter().map(|&kc| kc * kc).sum();
            if k2 == 0 {
                Complex { re: T::zero(), im: T::zero() }
            } else {
                c / (four_pi2 * lit::<T>(k2 as f64))
            }
        })
    }

    /// Convolution with the Coulomb kernel g (same multiplier as the inverse
    /// Laplacian; named to mirror g * mu).
    pub fn convolve_g(&self) -> Self {
        self.inverse_laplacian()
    }

    pub fn laplacian(&self) -> Self {
        let four_pi2 = lit::<T>(4.0) * T::PI() * T::PI();
        self.map_modes(|k, c| {
            let k2: i64 = k.iter().map(|&kc| kc * kc).sum();
            c * (-four_pi2 * lit::<T>(k2 as f64))
        })
    }

    /// Zero every mode with any |k_axis| > m/3 (2/3-rule dealiasing).
    pub fn dealias(&mut self) {
        let cut = (self.grid.m / 3) as i64;
        let len = self.grid.len();
        for flat in 0..len {
            let k = self.modes_of(flat);
            if k.iter().any(|&kc| kc.abs() > cut) {
                self.coeffs[flat] = Complex { re: T::zero(), im: T::zero() };
            }
        }
    }

    /// Physical-space product with 2/3-rule dealiasing applied to both
    /// inputs and the output.
    pub fn multiply_dealiased(&self, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        let mut a = self.clone();
        let mut b = other.clone();
        a.dealias();
        b.dealias();
        let sa = a.to_samples();
        let sb = b.to_samples();
        let prod: Vec<T> = sa.iter().zip(&sb).map(|(&x, &y)| x * y).collect();
        let mut out = Self::from_samples(self.grid, &prod);
        out.dealias();
        out
    }

    /// Pointwise linear combination self + c * other.
    pub fn axpy(&self, c: T, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        let coeffs =
            self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a + b * c).collect();
        ScalarField { grid: self.grid, coeffs }
    }

    pub fn scaled(&self, c: T) -> Self {
        ScalarField { grid: self.grid, coeffs: self.coeffs.iter().map(|&a| a * c).collect() }
    }

    /// Exact trigonometric evaluation at arbitrary points by direct mode
    /// summation (separable phase factors).
    pub fn evaluate_at(&self, points: &[TorusPoint<T>]) -> Vec<T> {
        let d = self.grid_d();
        let m = self.grid.m;
        let two_pi = lit::<T>(2.0) * T::PI();
        let zero = Complex { re: T::zero(), im: T::zero() };
        let mut out = Vec::with_capacity(points.len());
        let mut phase: Vec<Vec<Complex<T>>> = vec![vec![zero; m]; d];
        for p in points {
            let x = p.coords();
            for ax in 0..d {
                for i in 0..m {
                    let arg = two_pi * lit::<T>(self.grid.mode(i) as f64) * x[ax];
                    phase[ax][i] = Complex { re: arg.cos(), im: arg.sin() };
                }
            }
            let mut acc = zero;
            match d {
                2 => {
                    for i0 in 0..m {
                        let mut inner = zero;
                        let row = &self.coeffs[i0 * m..(i0 + 1) * m];
                        for (c, ph) in row.iter().zip(&phase[1]) {
                            inner = inner + *c * *ph;
                        }
                        acc = acc + inner * phase[0][i0];
                    }
                }
                3 => {
                    for i0 in 0..m {
                        let mut mid = zero;
                        for i1 in 0..m {
                            let base = (i0 * m + i1) * m;
                            let mut inner = zero;
                            let row = &self.coeffs[base..base + m];
                            for (c, ph) in row.iter().zip(&phase[2]) {
                                inner = inner + *c * *ph;
                            }
                            mid = mid + inner * phase[1][i1];
                        }
                        acc = acc + mid * phase[0][i0];
                    }
                }
                _ => unreachable!(),
            }
            out.push(acc.re);
        }
        out
    }

    /// L2 norm via Plancherel.
    pub fn l2_norm(&self) -> T {
        self.coeffs.iter().map(|c| c.re * c.re + c.im * c.im).sum::<T>().sqrt()
    }

    /// Max absolute value over a 4x oversampled physical grid.
    pub fn linf_norm(&self) -> T {
        let (_, samples) = self.to_samples_oversampled(4);
        samples.into_iter().fold(T::zero(), |acc, s| acc.max(s.abs()))
    }

    /// Lipschitz seminorm surrogate: max Euclidean norm of the gradient over
    /// a 4x oversampled grid.
    pub fn lip_seminorm(&self) -> T {
        self.gradient().linf_norm()
    }

    /// L^p norm by quadrature on a 4x oversampled grid.
    pub fn lp_norm(&self, p: T) -> T {
        let (big, samples) = self.to_samples_oversampled(4);
        let mean =
            samples.iter().map(|&s| s.abs().powf(p)).sum::<T>() / lit::<T>(big.len() as f64);
        mean.powf(p.recip())
    }

    /// Integral of the pointwise product of two real fields (Parseval).
    pub fn integral_product(&self, other: &Self) -> T {
        assert_eq!(self.grid, other.grid);
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Integral over the unit torus (= mean).
    pub fn integral(&self) -> T {
        self.mean()
    }

    // --- serialization -----------------------------------------------------

    /// Flat binary layout: u32 d, u32 m, then row-major physical samples as
    /// little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.grid.dim.as_usize() as u32).to_le_bytes())?;
        w.write_all(&(self.grid.m as u32).to_le_bytes())?;
        for s in self.to_samples() {
            w.write_all(&s.to_f64().unwrap().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let d = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let m = u32::from_le_bytes(u32buf) as usize;
        let dim = Dim::from_usize(d)
            .ok_or_else(|| Error::InvalidParameter(format!("bad dimension {d} in field header")))?;
        let grid = PeriodicGrid::new(dim, m)?;
        let mut samples = Vec::with_capacity(grid.len());
        let mut f64buf = [0u8; 8];
        for _ in 0..grid.len() {
            r.read_exact(&mut f64buf)?;
            samples.push(lit::<T>(f64::from_le_bytes(f64buf)));
        }
        Ok(Self::from_samples(grid, &samples))
    }

    pub fn write_binary_file(&self, path: &Path) -> Result<()> {
        self.write_binary(BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_binary_file(path: &Path) -> Result<Self> {
        Self::read_binary(BufReader::new(std::fs::File::open(path)?))
    }

    /// CSV of physical samples (one grid row per line), 17 significant
    /// digits; intended for small grids.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# d={},m={}", self.grid.dim.as_usize(), self.grid.m)?;
        let samples = self.to_samples();
        for row in samples.chunks(self.grid.m) {
            let line: Vec<String> =
                row.iter().map(|s| format!("{:.16e}", s.to_f64().unwrap())).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut header: Option<(usize, usize)> = None;
        let mut samples = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# d=") {
                let parts: Vec<&str> = rest.split(",m=").collect();
                if parts.len() == 2 {
                    let d = parts[0]
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidParameter("bad CSV header".into()))?;
                    let m = parts[1]
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidParameter("bad CSV header".into()))?;
                    header = Some((d, m));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad CSV value {tok}")))?;
                samples.push(lit::<T>(v));
            }
        }
        let (d, m) = header.ok_or_else(|| Error::InvalidParameter("missing CSV header".into()))?;
        let dim = Dim::from_usize(d)
            .ok_or_else(|| Error::InvalidParameter(format!("bad dimension {d}")))?;
        let grid = PeriodicGrid::new(dim, m)?;
        if samples.len() != grid.len() {
            return Err(Error::InvalidParameter("CSV sample count mismatch".into()));
        }
        Ok(Self::from_samples(grid, &samples))
    }
}

/// d-component real vector field.
#[derive(Clone, Debug)]
pub struct VectorField<T> {
    components: Vec<ScalarField<T>>,
}

impl<T: Real> VectorField<T> {
    pub fn new(components: Vec<ScalarField<T>>) -> Self {
        assert_eq!(components.len(), components[0].grid().dim().as_usize());
        VectorField { components }
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        let comps = (0..grid.dim().as_usize()).map(|_| ScalarField::zeros(grid)).collect();
        VectorField { components: comps }
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.components[0].grid()
    }

    #[inline]
    pub fn component(&self, i: usize) -> &ScalarField<T> {
        &self.components[i]
    }

    #[inline]
    pub fn components(&self) -> &[ScalarField<T>] {
        &self.components
    }

    pub fn divergence(&self) -> ScalarField<T> {
        let mut out = ScalarField::zeros(self.grid());
        for (ax, comp) in self.components.iter().enumerate() {
            let grad = comp.gradient();
            out = out.axpy(T::one(), grad.component(ax));
        }
        out
    }

    /// Evaluate all components at arbitrary points.
    pub fn evaluate_at(&self, points: &[TorusPoint<T>]) -> Vec<[T; 3]> {
        let per_comp: Vec<Vec<T>> = self.components.iter().map(|c| c.evaluate_at(points)).collect();
        (0..points.len())
            .map(|i| {
                let mut v = [T::zero(); 3];
                for (ax, comp) in per_comp.iter().enumerate() {
                    v[ax] = comp[i];
                }
                v
            })
            .collect()
    }

    /// Max Euclidean norm over a 4x oversampled grid.
    pub fn linf_norm(&self) -> T {
        let oversampled: Vec<Vec<T>> =
            self.components.iter().map(|c| c.to_samples_oversampled(4).1).collect();
        let n = oversampled[0].len();
        let mut best = T::zero();
        for i in 0..n {
            let mut s = T::zero();
            for comp in &oversampled {
                s += comp[i] * comp[i];
            }
            best = best.max(s);
        }
        best.sqrt()
    }

    /// Max over the oversampled grid of the Frobenius norm of the Jacobian.
    pub fn grad_linf_norm(&self) -> T {
        let mut arrays: Vec<Vec<T>> = Vec::new();
        for comp in &self.components {
            let g = comp.gradient();
            for c in &g.components {
                arrays.push(c.to_samples_oversampled(4).1);
            }
        }
        let n = arrays[0].len();
        let mut best = T::zero();
        for i in 0..n {
            let mut s = T::zero();
            for a in &arrays {
                s += a[i] * a[i];
            }
            best = best.max(s);
        }
        best.sqrt()
    }

    /// Computable surrogate for the C^{1,s} Holder norm:
    /// ||u||_inf + ||grad u||_inf plus the largest finite-difference s-Holder
    /// quotient of grad u over dyadic offsets of the 4x oversampled grid.
    /// A surrogate, not the true Holder norm.
    pub fn c1s_surrogate(&self, s: T) -> T {
        let base = self.linf_norm() + self.grad_linf_norm();
        let mut grads: Vec<Vec<T>> = Vec::new();
        for comp in &self.components {
            let g = comp.gradient();
            for c in &g.components {
                grads.push(c.to_samples_oversampled(4).1);
            }
        }
        let grid_m = self.grid().m() * 4;
        let d = self.grid().dim().as_usize();
        let h = T::one() / lit::<T>(grid_m as f64);
        let mut quotient = T::zero();
        let mut step = 1usize;
        while step <= grid_m / 4 {
            let dist = h * lit::<T>(step as f64);
            let damp = dist.powf(s).recip();
            for comp in &grads {
                let mut worst = T::zero();
                if d == 2 {
                    for i in 0..grid_m {
                        let row = i * grid_m;
                        let row_shift = ((i + step) % grid_m) * grid_m;
                        for j in 0..grid_m {
                            let v = comp[row + j];
                            let dx = (comp[row_shift + j] - v).abs();
                            let dy = (comp[row + (j + step) % grid_m] - v).abs();
                            worst = worst.max(dx.max(dy));
                        }
                    }
                } else {
                    let len = comp.len();
                    let stride = grid_m * grid_m;
                    for i in 0..len {
                        let shifted = (i + step * stride) % len;
                        worst = worst.max((comp[shifted] - comp[i]).abs());
                    }
                }
                quotient = quotient.max(worst * damp);
            }
            step *= 2;
        }
        base + quotient
    }
}
