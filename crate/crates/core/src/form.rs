//! Dirichlet form, energy density, generator and the spectral heat kernel.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::propagate::{log_sum_exp, Uniformizer};
use crate::space::{StateSpace, Vertex};

const NEGATIVE_FLAG: f64 = -1e-12;
// A spectral value is trusted when it exceeds its error estimate by this
// factor; smaller values are recomputed by uniformization.
const SPECTRAL_TRUST: f64 = 1e4;

/// `E(u,v) = 1/2 * sum_{x,y} w(x,y) (u(x)-u(y)) (v(x)-v(y))`.
pub fn dirichlet_energy(space: &StateSpace, u: &[f64], v: &[f64]) -> Result<f64> {
    space.check_function(u)?;
    space.check_function(v)?;
    let mut total = 0.0;
    for x in 0..space.len() {
        for &(y, w) in space.neighbors(x) {
            if y > x {
                total += w * (u[x] - u[y]) * (v[x] - v[y]);
            }
        }
    }
    Ok(total)
}

/// Energy-measure density `gamma(u)(x) = (1/m(x)) sum_y w(x,y) (u(x)-u(y))^2`.
pub fn energy_density(space: &StateSpace, u: &[f64]) -> Result<Vec<f64>> {
    space.check_function(u)?;
    Ok(energy_density_unchecked(space, u))
}

pub(crate) fn energy_density_unchecked(space: &StateSpace, u: &[f64]) -> Vec<f64> {
    (0..space.len())
        .map(|x| {
            let s: f64 = space
                .neighbors(x)
                .iter()
                .map(|&(y, w)| {
                    let d = u[x] - u[y];
                    w * d * d
                })
                .sum();
            s / space.mass(x)
        })
        .collect()
}

/// `(Au)(x) = (1/m(x)) sum_y w(x,y) (u(y) - u(x))`.
pub fn generator_apply(space: &StateSpace, u: &[f64]) -> Result<Vec<f64>> {
    space.check_function(u)?;
    Ok((0..space.len())
        .map(|x| {
            let s: f64 = space
                .neighbors(x)
                .iter()
                .map(|&(y, w)| w * (u[y] - u[x]))
                .sum();
            s / space.mass(x)
        })
        .collect())
}

/// `<u, v>_m`.
pub fn inner_m(space: &StateSpace, u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .zip(space.measure())
        .map(|((a, b), m)| a * b * m)
        .sum()
}

/// Eigendecomposition of `-A`, orthonormal in `L^2(m)`.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    space: Arc<StateSpace>,
    eigenvalues: Vec<f64>,
    // Column k holds phi_k.
    modes: DMatrix<f64>,
    uniformizer: Uniformizer,
    error_scale: f64,
}

/// One heat-kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub t: f64,
    pub x: Vertex,
    pub y: Vertex,
    /// Density against m, floored at 0.
    pub value: f64,
    /// Natural log of the density, finite even when `value` underflows.
    pub log_value: f64,
    /// The raw spectral sum was below -1e-12 before flooring.
    pub negative_flag: bool,
}

/// Build the spectral cache of a validated space.
pub fn build_spectral_cache(space: Arc<StateSpace>) -> Result<SpectralCache> {
    SpectralCache::new(space)
}

impl SpectralCache {
    pub fn new(space: impl Into<Arc<StateSpace>>) -> Result<Self> {
        let space: Arc<StateSpace> = space.into();
        let report = crate::space::validate_space(&space);
        if !report.passed() {
            return Err(Error::Validation(report.to_string()));
        }
        let n = space.len();
        let sqrt_m: Vec<f64> = space.measure().iter().map(|m| m.sqrt()).collect();
        let mut s = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            s[(x, x)] = space.degree(x) / space.mass(x);
            for &(y, w) in space.neighbors(x) {
                s[(x, y)] = -w / (sqrt_m[x] * sqrt_m[y]);
            }
        }
        let norm = (0..n)
            .map(|x| (0..n).map(|y| s[(x, y)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let eig = SymmetricEigen::try_new(s, f64::EPSILON, 0).ok_or_else(|| {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge (n = {n}, operator norm bound {norm:.3e})"
            ))
        })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let floor = -1e-10 * norm.max(1.0);
        let mut eigenvalues = Vec::with_capacity(n);
        let mut modes = DMatrix::<f64>::zeros(n, n);
        for (k, &j) in order.iter().enumerate() {
            let lam = eig.eigenvalues[j];
            if lam < floor {
                return Err(Error::Numerical(format!(
                    "eigenvalue {lam:.3e} below {floor:.1e}; operator norm bound {norm:.3e}"
                )));
            }
            eigenvalues.push(lam.max(0.0));
            for x in 0..n {
                modes[(x, k)] = eig.eigenvectors[(x, j)] / sqrt_m[x];
            }
        }
        if eigenvalues[0].abs() > 1e-10 * norm.max(1.0) {
            return Err(Error::Numerical(format!(
                "bottom eigenvalue {:.3e} is not zero",
                eigenvalues[0]
            )));
        }
        // Connected and conservative: the bottom mode is exactly constant.
        eigenvalues[0] = 0.0;
        let c = 1.0 / space.total_mass().sqrt();
        for x in 0..n {
            modes[(x, 0)] = c;
        }
        let uniformizer = Uniformizer::new(&space);
        Ok(SpectralCache {
            error_scale: 8.0 * n as f64 * f64::EPSILON,
            space,
            eigenvalues,
            modes,
            uniformizer,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn space_arc(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `phi_k` as a vertex function.
    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.modes.column(k).iter().copied().collect()
    }

    pub fn uniformizer(&self) -> &Uniformizer {
        &self.uniformizer
    }

    /// `max |<phi_j, phi_k>_m - delta_jk|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.len();
        let mut weighted = self.modes.clone();
        for x in 0..n {
            let m = self.space.mass(x);
            for k in 0..n {
                weighted[(x, k)] *= m;
            }
        }
        let gram = self.modes.transpose() * weighted;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for k in 0..n {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((gram[(j, k)] - target).abs());
            }
        }
        worst
    }

    fn check_time(t: f64, allow_zero: bool) -> Result<()> {
        let ok = t.is_finite() && (t > 0.0 || (allow_zero && t == 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTime(format!(
                "t = {t} must be {}",
                if allow_zero {
                    "nonnegative"
                } else {
                    "positive"
                }
            )))
        }
    }

    fn decay(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (-l * t).exp()).collect()
    }

    fn error_bound(&self, t: f64, abs_sum: f64) -> f64 {
        let lam_max = self.eigenvalues.last().copied().unwrap_or(0.0);
        self.error_scale * (1.0 + t * lam_max) * abs_sum
    }

    /// Spectral sum and its absolute-value companion for `p_t(x,y)`.
    fn kernel_sum(&self, t: f64, x: Vertex, y: Vertex) -> (f64, f64) {
        let mut s = 0.0;
        let mut a = 0.0;
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            let term = (-lam * t).exp() * self.modes[(x, k)] * self.modes[(y, k)];
            s += term;
            a += term.abs();
        }
        (s, a)
    }

    /// `p_t(x,y)`, switching to log-space uniformization when the value is
    /// too small for the spectral sum to resolve.
    pub fn heat_kernel(&self, t: f64, x: Vertex, y: Vertex) -> Result<KernelValue> {
        Self::check_time(t, false)?;
        self.space.check_vertex(x)?;
        self.space.check_vertex(y)?;
        let (raw, abs_sum) = self.kernel_sum(t, x, y);
        let negative_flag = raw < NEGATIVE_FLAG;
        if raw > SPECTRAL_TRUST * self.error_bound(t, abs_sum) {
            return Ok(KernelValue {
                t,
                x,
                y,
                value: raw,
                log_value: raw.ln(),
                negative_flag,
            });
        }
        // Symmetric in (x,y); propagate from the larger index for a
        // deterministic choice.
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        let mut f = vec![0.0; self.len()];
        f[b] = 1.0;
        let prop = self.uniformizer.log_column(t, &f, Some(&[a]));
        let log_value = prop.log_values[a] - self.space.mass(b).ln();
        Ok(KernelValue {
            t,
            x,
            y,
            value: log_value.exp(),
            log_value,
            negative_flag,
        })
    }

    /// Dense `p_t` matrix from the spectral sum, floored at 0.
    pub fn kernel_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        Self::check_time(t, false)?;
        Ok(self.raw_kernel_matrix(t).map(|v| v.max(0.0)))
    }

    fn raw_kernel_matrix(&self, t: f64) -> DMatrix<f64> {
        let decay = self.decay(t);
        let mut scaled = self.modes.clone();
        for (k, d) in decay.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*d);
        }
        let p = &scaled * self.modes.transpose();
        // Symmetrize away the last-bit asymmetry of the product.
        (&p + p.transpose()) * 0.5
    }

    /// `T_t f`.
    pub fn semigroup_apply(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        Self::check_time(t, true)?;
        self.space.check_function(f)?;
        if t == 0.0 {
            return Ok(f.to_vec());
        }
        let coeffs = self.coefficients(f);
        let decay = self.decay(t);
        let weighted =
            DVector::from_iterator(self.len(), coeffs.iter().zip(&decay).map(|(c, d)| c * d));
        Ok((&self.modes * weighted).iter().copied().collect())
    }

    /// `<phi_k, f>_m` for all k.
    fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let mf = DVector::from_iterator(
            self.len(),
            f.iter().zip(self.space.measure()).map(|(a, m)| a * m),
        );
        (self.modes.transpose() * mf).iter().copied().collect()
    }

    /// `ln (T_t f)(x)` for nonnegative `f`, accurate far below underflow.
    pub fn log_semigroup_at(&self, t: f64, f: &[f64], x: Vertex) -> Result<f64> {
        Self::check_time(t, true)?;
        self.space.check_function(f)?;
        self.space.check_vertex(x)?;
        if f.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::validation(
                "log semigroup needs a nonnegative function",
            ));
        }
        if t == 0.0 {
            return Ok(f[x].ln());
        }
        let coeffs = self.coefficients(f);
        let mut s = 0.0;
        let mut a = 0.0;
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            let term = (-lam * t).exp() * coeffs[k] * self.modes[(x, k)];
            s += term;
            a += term.abs();
        }
        if s > SPECTRAL_TRUST * self.error_bound(t, a) {
            return Ok(s.ln());
        }
        Ok(self.uniformizer.log_column(t, f, Some(&[x])).log_values[x])
    }

    /// `ln (T_t f)(x)` at every `x` in `watch`, by uniformization only.
    pub fn log_semigroup_watch(&self, t: f64, f: &[f64], watch: &[Vertex]) -> Result<Vec<f64>> {
        Self::check_time(t, true)?;
        self.space.check_function(f)?;
        let prop = self.uniformizer.log_column(t, f, Some(watch));
        Ok(watch.iter().map(|&x| prop.log_values[x]).collect())
    }

    /// `max_{x,y} |p_t(x,y) - sum_z p_r(x,z) p_{t-r}(z,y) m(z)|`.
    pub fn chapman_kolmogorov_residual(&self, t: f64, r: f64) -> Result<f64> {
        Self::check_time(t, false)?;
        Self::check_time(r, false)?;
        if r >= t {
            return Err(Error::InvalidTime(format!(
                "need 0 < r < t, got r = {r}, t = {t}"
            )));
        }
        let pt = self.raw_kernel_matrix(t);
        let pr = self.raw_kernel_matrix(r);
        let mut ps = self.raw_kernel_matrix(t - r);
        for z in 0..self.len() {
            let m = self.space.mass(z);
            ps.row_mut(z).scale_mut(m);
        }
        let composed = pr * ps;
        Ok((pt - composed).amax())
    }

    /// `max_x |sum_y p_t(x,y) m(y) - 1|`.
    pub fn mass_conservation_defect(&self, t: f64) -> Result<f64> {
        Self::check_time(t, false)?;
        let p = self.raw_kernel_matrix(t);
        let m = self.space.measure();
        Ok((0..self.len())
            .map(|x| {
                let s: f64 = (0..self.len()).map(|y| p[(x, y)] * m[y]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max))
    }

    /// `ln (1_A, T_t 1_B)_m`.
    pub fn log_pairing(&self, t: f64, a: &[Vertex], b: &[Vertex]) -> Result<f64> {
        Self::check_time(t, false)?;
        let n = self.len();
        let mut fa = vec![0.0; n];
        let mut fb = vec![0.0; n];
        for &v in a {
            self.space.check_vertex(v)?;
            fa[v] = 1.0;
        }
        for &v in b {
            self.space.check_vertex(v)?;
            fb[v] = 1.0;
        }
        let ca = self.coefficients(&fa);
        let cb = self.coefficients(&fb);
        let mut s = 0.0;
        let mut abs = 0.0;
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            let term = (-lam * t).exp() * ca[k] * cb[k];
            s += term;
            abs += term.abs();
        }
        if s > SPECTRAL_TRUST * self.error_bound(t, abs) {
            return Ok(s.ln());
        }
        let vals = self.log_semigroup_watch(t, &fb, a)?;
        Ok(log_sum_exp(
            a.iter()
                .zip(vals)
                .map(|(&x, l)| l + self.space.mass(x).ln()),
        ))
    }
}
