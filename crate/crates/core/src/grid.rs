//! Uniform periodic grid truncating R^3 to the box [-L, L)^3, with its
//! spectral wavenumber lattice.

use crate::error::{CoreError, Result};

/// Cubic grid with `n` points per axis on the box `[-half_width, half_width)^3`.
///
/// Physical points are `xi_j = -L + j*h` with `h = 2L/n` (so `h*n = 2L`
/// exactly). The wavenumber lattice along each axis is `(pi/L) * s` for the
/// signed index `s in {-n/2, ..., n/2 - 1}`; it is symmetric under negation
/// except for the Nyquist plane `s = -n/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    n: usize,
    half_width: f64,
}

impl Grid3 {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(CoreError::InvalidParameter(format!(
                "points_per_axis must be positive and even, got {n}"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "half_width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Self { n, half_width })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Points along the stored (Hermitian) x half-spectrum: n/2 + 1.
    #[inline]
    pub fn n_half(&self) -> usize {
        self.n / 2 + 1
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Volume element h^3 of the trapezoidal quadrature rule.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h * h * h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of stored spectral samples per component (x half-spectrum).
    #[inline]
    pub fn spectral_len(&self) -> usize {
        self.n_half() * self.n * self.n
    }

    /// Physical coordinate of point index `j` along any axis.
    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    /// Signed lattice index for array index `j` along a full (y or z) axis.
    #[inline]
    pub fn signed_index(&self, j: usize) -> i64 {
        let j = j as i64;
        let n = self.n as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Wavenumber for array index `j` along a full axis.
    #[inline]
    pub fn wavenumber(&self, j: usize) -> f64 {
        std::f64::consts::PI / self.half_width * self.signed_index(j) as f64
    }

    /// Wavenumber for the stored x half-spectrum index `ix in 0..=n/2`.
    /// The topmost entry `ix = n/2` is the Nyquist mode.
    #[inline]
    pub fn wavenumber_half(&self, ix: usize) -> f64 {
        std::f64::consts::PI / self.half_width * ix as f64
    }

    /// Largest signed index kept by the 2/3 dealiasing rule.
    ///
    /// Modes with `|s| > floor((n-1)/3)` are zeroed. The symmetric cutoff
    /// keeps the mask Hermitian and makes quadratic products strictly
    /// alias-free; the per-axis retained count is `2*floor((n-1)/3) + 1`.
    #[inline]
    pub fn dealias_keep(&self) -> i64 {
        ((self.n as i64) - 1) / 3
    }

    /// Flat index of physical point (iz, iy, ix), x fastest.
    #[inline]
    pub fn idx(&self, iz: usize, iy: usize, ix: usize) -> usize {
        (iz * self.n + iy) * self.n + ix
    }

    /// Flat index into the half-spectrum array, x fastest.
    #[inline]
    pub fn kidx(&self, iz: usize, iy: usize, ix: usize) -> usize {
        (iz * self.n + iy) * self.n_half() + ix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_times_n_is_exact() {
        for &(n, l) in &[(16usize, 12.0f64), (64, 16.0), (96, 12.0), (128, 16.0)] {
            let g = Grid3::new(n, l).unwrap();
            assert_eq!(g.spacing() * n as f64, 2.0 * l);
        }
    }

    #[test]
    fn wavenumber_lattice_symmetric_except_nyquist() {
        let g = Grid3::new(16, 8.0).unwrap();
        for j in 1..8 {
            assert_eq!(g.wavenumber(j), -g.wavenumber(16 - j));
        }
        // Nyquist plane has no positive partner
        assert_eq!(g.signed_index(8), -8);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid3::new(15, 8.0).is_err());
        assert!(Grid3::new(0, 8.0).is_err());
        assert!(Grid3::new(16, 0.0).is_err());
        assert!(Grid3::new(16, -2.0).is_err());
    }

    #[test]
    fn coords_cover_box() {
        let g = Grid3::new(32, 12.0).unwrap();
        assert_eq!(g.coord(0), -12.0);
        assert!(g.coord(31) < 12.0);
        assert!((g.coord(16)).abs() < 1e-15);
    }
}
