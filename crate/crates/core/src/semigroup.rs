//! Exact action of the heat semigroup and of e^{tau Lambda}, spectral
//! projections onto the slow eigenspaces, and the continuous-spectrum probe.
//!
//! The Lambda flow is computed from the exact factorization
//!     (e^{tau Lambda} f)(xi) = e^{tau} (e^{(e^tau - 1) Delta} f)(xi e^{tau/2}),
//! applied as dilation first and heat flow second:
//!     e^{tau Lambda} = e^{tau} H_{a(tau)} D_{e^{tau/2}},   a(tau) = 1 - e^{-tau},
//! which is the same operator (H_t D_a = D_a H_{a^2 t}) but keeps every
//! intermediate Gaussian-localized: the dilation samples the *original*
//! decaying field, and the heat time stays bounded by 1. Dilation is exact
//! band-limited interpolation (chirp-z); requested points outside the box are
//! treated as zero and reported through `truncation`.

use crate::error::{CoreError, Result};
use crate::field::{VectorFieldK, VectorFieldR, WeightExponent};
use crate::grid::Grid3;
use crate::operators;
use crate::{basis, fft, field, threading};

/// Multiply by the heat symbol exp(-|k|^2 t) using separable per-axis tables.
pub(crate) fn heat_multiply(w: &mut VectorFieldK, t: f64) {
    let grid = w.grid;
    let n = grid.n();
    let nh = grid.n_half();
    let table_full: Vec<f64> = (0..n)
        .map(|j| {
            let k = grid.wavenumber(j);
            (-k * k * t).exp()
        })
        .collect();
    let table_half: Vec<f64> = (0..nh)
        .map(|j| {
            let k = grid.wavenumber_half(j);
            (-k * k * t).exp()
        })
        .collect();
    let plane = n * nh;
    for c in 0..3 {
        threading::par_chunks_mut(&mut w.comps[c], plane, |iz, chunk| {
            let fz = table_full[iz];
            for iy in 0..n {
                let f = fz * table_full[iy];
                let row = &mut chunk[iy * nh..(iy + 1) * nh];
                for (ix, v) in row.iter_mut().enumerate() {
                    *v *= f * table_half[ix];
                }
            }
        });
    }
}

/// e^{t Delta} f: multiply spectral coefficients by exp(-|k|^2 t).
pub fn apply_heat(f: &VectorFieldR, t: f64) -> Result<VectorFieldR> {
    if !(t > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "heat time must be positive, got {t}"
        )));
    }
    let mut k = f.to_spectral();
    heat_multiply(&mut k, t);
    Ok(k.to_physical())
}

/// Result of the Lambda flow with the boundary-truncation report.
pub struct LambdaFlow {
    pub field: VectorFieldR,
    /// Largest boundary-shell magnitude of the input relative to its max;
    /// mass here is lost by the out-of-box masking of the dilation.
    pub boundary_fraction: f64,
    pub truncated: bool,
}

/// Tolerance above which the dilation reports truncation.
pub const TRUNCATION_TOL: f64 = 1e-10;

/// e^{tau Lambda} f for the vorticity-space operator
/// Lambda = Delta + (xi.grad)/2 + 1.
pub fn apply_lambda_semigroup(f: &VectorFieldR, tau: f64) -> Result<LambdaFlow> {
    if !(tau > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "semigroup time must be positive, got {tau}"
        )));
    }
    let spec = f.to_spectral();
    let out = lambda_flow_spectral(&spec, tau);
    let bf = f.boundary_fraction();
    Ok(LambdaFlow {
        field: out,
        boundary_fraction: bf,
        truncated: bf > TRUNCATION_TOL,
    })
}

/// Spectral-input Lambda flow (dilate, then heat by a(tau) = 1 - e^{-tau},
/// then scale by e^{tau}).
pub(crate) fn lambda_flow_spectral(spec: &VectorFieldK, tau: f64) -> VectorFieldR {
    let grid = spec.grid;
    let eng = fft::engine(grid.n());
    let a = (0.5 * tau).exp();
    let mut dilated = VectorFieldR::zeros(grid);
    for c in 0..3 {
        eng.resample(&spec.comps[c], a, 1.0, &mut dilated.comps[c]);
    }
    let mut k = dilated.to_spectral();
    heat_multiply(&mut k, -(-tau).exp_m1()); // a(tau) = 1 - e^{-tau}
    let mut out = k.to_physical();
    out.scale(tau.exp());
    out
}

/// Decomposition of a field into resolved eigenvalue shells plus remainder.
pub struct SpectralSplit {
    /// Number of resolved shells (0, 1, or 2).
    pub shells: u32,
    /// beta coefficients (pairings with p_i), shells >= 1.
    pub beta: [f64; 3],
    /// gamma coefficients (pairings with q_i), shells >= 2.
    pub gamma: [f64; 3],
    /// zeta coefficients over S, shells >= 2.
    pub zeta: [f64; 5],
    /// w minus the discrete part; pairings against the duals up to the
    /// resolved shell vanish to quadrature tolerance.
    pub remainder: VectorFieldR,
}

impl SpectralSplit {
    /// Reassemble discrete part + remainder.
    pub fn reassemble(&self) -> VectorFieldR {
        let grid = self.remainder.grid;
        let beta = self.beta;
        let gamma = self.gamma;
        let zeta = self.zeta;
        let shells = self.shells;
        let mut out = VectorFieldR::sample(grid, move |x, y, z| {
            let mut acc = [0.0; 3];
            if shells >= 1 {
                for i in 0..3 {
                    let f = basis::eval_basis(
                        basis::BasisLabel::new(basis::Family::F, i).unwrap(),
                        x,
                        y,
                        z,
                    );
                    for c in 0..3 {
                        acc[c] += beta[i] * f[c];
                    }
                }
            }
            if shells >= 2 {
                for i in 0..3 {
                    let g = basis::eval_basis(
                        basis::BasisLabel::new(basis::Family::G, i).unwrap(),
                        x,
                        y,
                        z,
                    );
                    for c in 0..3 {
                        acc[c] += gamma[i] * g[c];
                    }
                }
                for i in 0..5 {
                    let h = basis::eval_basis(
                        basis::BasisLabel::new(basis::Family::H, i).unwrap(),
                        x,
                        y,
                        z,
                    );
                    for c in 0..3 {
                        acc[c] += zeta[i] * h[c];
                    }
                }
            }
            acc
        });
        out.axpy(1.0, &self.remainder);
        out
    }
}

/// Project out the resolved eigenvalue shells: discrete part holds the dual
/// pairings, remainder = w - sum(coeff * eigenfield).
///
/// The weight constraint m > n + 3/2 keeps the split inside the function
/// space where it is defined, even though the discrete pairings exist for
/// any m.
pub fn spectral_split(w: &VectorFieldR, shells: u32, m: WeightExponent) -> Result<SpectralSplit> {
    if shells > 2 {
        return Err(CoreError::InvalidParameter(format!(
            "resolved shells must be 0, 1 or 2, got {shells}"
        )));
    }
    if m.value() <= shells as f64 + 1.5 {
        return Err(CoreError::InvalidParameter(format!(
            "weight m = {} too small for shell {shells}: the split needs m > n + 3/2",
            m.value()
        )));
    }
    let ms = crate::diagnostics::moments(w);
    let beta = if shells >= 1 { ms.beta } else { [0.0; 3] };
    let (gamma, zeta) = if shells >= 2 {
        (ms.gamma, ms.zeta)
    } else {
        ([0.0; 3], [0.0; 5])
    };
    let grid = w.grid;
    let mut remainder = VectorFieldR::sample(grid, move |x, y, z| {
        let mut acc = [0.0; 3];
        if shells >= 1 {
            for i in 0..3 {
                let f =
                    basis::eval_basis(basis::BasisLabel::new(basis::Family::F, i).unwrap(), x, y, z);
                for c in 0..3 {
                    acc[c] -= beta[i] * f[c];
                }
            }
        }
        if shells >= 2 {
            for i in 0..3 {
                let g =
                    basis::eval_basis(basis::BasisLabel::new(basis::Family::G, i).unwrap(), x, y, z);
                for c in 0..3 {
                    acc[c] -= gamma[i] * g[c];
                }
            }
            for i in 0..5 {
                let h =
                    basis::eval_basis(basis::BasisLabel::new(basis::Family::H, i).unwrap(), x, y, z);
                for c in 0..3 {
                    acc[c] -= zeta[i] * h[c];
                }
            }
        }
        acc
    });
    remainder.axpy(1.0, w);
    Ok(SpectralSplit {
        shells,
        beta,
        gamma,
        zeta,
        remainder,
    })
}

/// The continuous-spectrum probe psi_lambda, constructed in Fourier
/// variables as |k|^{-2(lambda+1)} e^{-|k|^2} (-i k_2, i k_1, 0) on the
/// lattice (zero mean mode), normalized to unit L^2 norm.
///
/// Only real lambda <= -1/2 is supported: there the inverse-power weight is
/// bounded on the lattice. Negative integers -(lambda+1) in N give
/// polynomial weights and are harmless.
pub fn eval_continuous_mode(lambda: f64, grid: Grid3) -> Result<VectorFieldR> {
    if !(lambda <= -0.5) {
        return Err(CoreError::InvalidParameter(format!(
            "continuous mode requires real lambda <= -1/2, got {lambda}"
        )));
    }
    let n = grid.n();
    let nh = grid.n_half();
    let mut spec = VectorFieldK::zeros(grid);
    let expo = -2.0 * (lambda + 1.0);
    let plane = n * nh;
    {
        let (c0, rest) = spec.comps.split_at_mut(1);
        let c1 = &mut rest[0];
        threading::pool().install(|| {
            use rayon::prelude::*;
            c0[0]
                .par_chunks_mut(plane)
                .zip(c1.par_chunks_mut(plane))
                .enumerate()
                .for_each(|(iz, (p0, p1))| {
                    let sz = grid.signed_index(iz);
                    let kz = grid.wavenumber(iz);
                    for iy in 0..n {
                        let sy = grid.signed_index(iy);
                        let ky = grid.wavenumber(iy);
                        for ix in 0..nh {
                            let kx = grid.wavenumber_half(ix);
                            let k2 = kx * kx + ky * ky + kz * kz;
                            if k2 == 0.0 {
                                continue;
                            }
                            // centered-field phase (-1)^{sum of signed indices}
                            let parity = (ix as i64 + sy + sz).rem_euclid(2);
                            let sign = if parity == 0 { 1.0 } else { -1.0 };
                            let w = sign * k2.powf(expo / 2.0) * (-k2).exp();
                            let idx = iy * nh + ix;
                            // (-i k2, i k1, 0)
                            p0[idx] = crate::field::C64::new(0.0, -w * ky);
                            p1[idx] = crate::field::C64::new(0.0, w * kx);
                        }
                    }
                });
        });
    }
    // enforce the within-plane Hermitian symmetry on the ix = 0 and Nyquist
    // planes so synthesis is exactly real
    for c in 0..2 {
        for &ix in &[0usize, n / 2] {
            let comp = &mut spec.comps[c];
            for iz in 0..n {
                for iy in 0..n {
                    let mz = (n - iz) % n;
                    let my = (n - iy) % n;
                    if (iz, iy) <= (mz, my) {
                        let a = comp[grid.kidx(iz, iy, ix)];
                        let b = comp[grid.kidx(mz, my, ix)];
                        let avg = 0.5 * (a + b.conj());
                        comp[grid.kidx(iz, iy, ix)] = avg;
                        comp[grid.kidx(mz, my, ix)] = avg.conj();
                    }
                }
            }
        }
    }
    let mut out = spec.to_physical();
    let norm = field::weighted_norm(&out, WeightExponent::new(0.0).unwrap());
    if norm > 0.0 {
        out.scale(1.0 / norm);
    }
    Ok(out)
}

/// Report from the smoothing-bound sampler: for each tau, the largest value
/// over the suite of
///   |rho^m d^alpha e^{tau Lambda} f|_p * a(tau)^{3/2 (1/q - 1/p) + |alpha|/2}
///   / |rho^m f|_q .
pub struct SmoothingReport {
    pub taus: Vec<f64>,
    pub max_ratios: Vec<f64>,
    /// max ratio at the smallest tau divided by the median ratio; an
    /// unbounded-as-tau->0 family would blow this up.
    pub small_tau_trend: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn verify_smoothing_bound(
    p: f64,
    q: f64,
    alpha: [u8; 3],
    taus: &[f64],
    m: WeightExponent,
    grid: Grid3,
    suite: usize,
    seed: u64,
) -> Result<SmoothingReport> {
    if !(1.0 <= q && q <= p) {
        return Err(CoreError::InvalidParameter(format!(
            "need 1 <= q <= p, got q = {q}, p = {p}"
        )));
    }
    if taus.iter().any(|t| !(*t > 0.0)) {
        return Err(CoreError::InvalidParameter(
            "tau list must be positive".into(),
        ));
    }
    let order: u32 = alpha.iter().map(|&a| a as u32).sum();
    let exponent = 1.5 * (1.0 / q - 1.0 / p) + order as f64 / 2.0;
    let mut max_ratios = vec![0.0f64; taus.len()];
    for s in 0..suite {
        let f = crate::rand_fields::random_solenoidal(grid, seed + s as u64, grid.half_width() / 8.0);
        let denom = field::weighted_lp_norm(&f, m, q)?;
        if denom == 0.0 {
            continue;
        }
        let spec = f.to_spectral();
        for (i, &tau) in taus.iter().enumerate() {
            let flowed = lambda_flow_spectral(&spec, tau);
            let deriv = derivative_multi(&flowed, alpha);
            let num = field::weighted_lp_norm(&deriv, m, p)?;
            let a_tau = -(-tau).exp_m1();
            let ratio = num * a_tau.powf(exponent) / denom;
            if ratio > max_ratios[i] {
                max_ratios[i] = ratio;
            }
        }
    }
    let mut sorted = max_ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2].max(1e-300);
    // ratio at the smallest tau over the median
    let (i_min, _) = taus
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    Ok(SmoothingReport {
        taus: taus.to_vec(),
        max_ratios: max_ratios.clone(),
        small_tau_trend: max_ratios[i_min] / median,
    })
}

/// Apply the multi-index spectral derivative d^alpha.
pub fn derivative_multi(f: &VectorFieldR, alpha: [u8; 3]) -> VectorFieldR {
    let mut spec = f.to_spectral();
    for (axis, &count) in alpha.iter().enumerate() {
        for _ in 0..count {
            spec = operators::map_spectral(&spec, |kx, ky, kz, v| {
                let k = [kx, ky, kz][axis];
                let ik = crate::field::C64::new(0.0, k);
                [ik * v[0], ik * v[1], ik * v[2]]
            });
        }
    }
    spec.to_physical()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisLabel;

    fn core_max_diff(grid: Grid3, a: &VectorFieldR, b: &VectorFieldR, core: f64) -> f64 {
        let n = grid.n();
        let mut err = 0.0f64;
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let (x, y, z) = (grid.coord(ix), grid.coord(iy), grid.coord(iz));
                    if x.abs() <= core && y.abs() <= core && z.abs() <= core {
                        let i = grid.idx(iz, iy, ix);
                        for c in 0..3 {
                            err = err.max((a.comps[c][i] - b.comps[c][i]).abs());
                        }
                    }
                }
            }
        }
        err
    }

    #[test]
    fn heat_of_gaussian_is_spread_gaussian() {
        let grid = Grid3::new(64, 12.0).unwrap();
        let g = VectorFieldR::sample(grid, |x, y, z| [basis::eval_g(x, y, z), 0.0, 0.0]);
        let t = 1.0;
        let heated = apply_heat(&g, t).unwrap();
        let want = VectorFieldR::sample(grid, |x, y, z| {
            let r2 = x * x + y * y + z * z;
            [
                (4.0 * std::f64::consts::PI * (1.0 + t)).powf(-1.5) * (-r2 / (4.0 * (1.0 + t))).exp(),
                0.0,
                0.0,
            ]
        });
        let err = core_max_diff(grid, &heated, &want, 6.0);
        assert!(err < 1e-10, "heat kernel error {err}");

        // identity at t -> 0+
        let tiny = apply_heat(&g, 1e-8).unwrap();
        let err0 = core_max_diff(grid, &tiny, &g, 12.0);
        assert!(err0 < 1e-9);

        // semigroup law
        let a = apply_heat(&apply_heat(&g, 0.3).unwrap(), 0.7).unwrap();
        let b = apply_heat(&g, 1.0).unwrap();
        let errs = core_max_diff(grid, &a, &b, 12.0);
        assert!(errs < 1e-12);

        assert!(apply_heat(&g, 0.0).is_err());
        assert!(apply_heat(&g, -1.0).is_err());
    }

    #[test]
    fn lambda_flow_decays_eigenfields() {
        let grid = Grid3::new(64, 12.0).unwrap();
        for (label, rate, tau) in [
            ("f1", -1.0, 1.0),
            ("g2", -1.5, 0.5),
            ("h12", -1.5, 0.5),
        ] {
            let u = basis::sample(BasisLabel::parse(label).unwrap(), grid);
            let flowed = apply_lambda_semigroup(&u, tau).unwrap();
            let mut want = u.clone();
            want.scale((rate * tau).exp());
            let err = core_max_diff(grid, &flowed.field, &want, 6.0);
            let scale = u.max_abs();
            assert!(
                err < 1e-6 * scale.max(1.0),
                "{label}: eigenflow error {err}"
            );
        }
        let u = basis::sample(BasisLabel::parse("f1").unwrap(), grid);
        assert!(apply_lambda_semigroup(&u, 0.0).is_err());
    }

    #[test]
    fn lambda_flow_semigroup_law() {
        let grid = Grid3::new(48, 12.0).unwrap();
        let f = crate::rand_fields::random_solenoidal(grid, 3, 2.0);
        let once = apply_lambda_semigroup(&f, 0.75).unwrap().field;
        let composed = apply_lambda_semigroup(
            &apply_lambda_semigroup(&f, 0.25).unwrap().field,
            0.5,
        )
        .unwrap()
        .field;
        let err = core_max_diff(grid, &once, &composed, grid.half_width() / 2.0);
        assert!(err < 1e-6 * f.max_abs(), "semigroup law error {err}");
    }

    #[test]
    fn mehler_kernel_quadrature_oracle() {
        // e^{tau Lambda} against direct quadrature with the explicit kernel:
        // (e^{tau L} f)(xi) with e^{tau Lambda} = e^{-tau/2} e^{tau L} and
        // (e^{tau L} f)(xi) = e^{3 tau/2} (4 pi a)^{-3/2}
        //                     int exp(-|xi e^{tau/2} - eta|^2 / (4 a)) f(eta) deta,
        // a = 1 - e^{-tau} after rescaling eta' = eta e^{-tau/2}; equivalently
        // heat to time e^tau - 1 at the dilated point.
        let grid = Grid3::new(32, 10.0).unwrap();
        let f = VectorFieldR::sample(grid, |x, y, z| {
            let e = (-(x * x + y * y + z * z) / 3.0).exp();
            [e, 0.5 * e * x, -e * (y - 0.2 * z)]
        });
        let tau = 0.8;
        let flowed = apply_lambda_semigroup(&f, tau).unwrap().field;
        // direct quadrature at a few points
        let t_heat = tau.exp() - 1.0;
        let vol = grid.cell_volume();
        let n = grid.n();
        for &(px, py, pz) in &[(0.0, 0.0, 0.0), (1.25, -0.625, 0.0), (2.5, 1.25, -1.875)] {
            let (qx, qy, qz) = (
                px * (0.5 * tau).exp(),
                py * (0.5 * tau).exp(),
                pz * (0.5 * tau).exp(),
            );
            let mut acc = [0.0f64; 3];
            let norm = (4.0 * std::f64::consts::PI * t_heat).powf(-1.5);
            for iz in 0..n {
                let z = grid.coord(iz);
                for iy in 0..n {
                    let y = grid.coord(iy);
                    for ix in 0..n {
                        let x = grid.coord(ix);
                        let d2 = (qx - x).powi(2) + (qy - y).powi(2) + (qz - z).powi(2);
                        let ker = norm * (-d2 / (4.0 * t_heat)).exp();
                        let i = grid.idx(iz, iy, ix);
                        for c in 0..3 {
                            acc[c] += ker * f.comps[c][i];
                        }
                    }
                }
            }
            // grid index of the probe point
            let gi = |v: f64| ((v + grid.half_width()) / grid.spacing()).round() as usize;
            let idx = grid.idx(gi(pz), gi(py), gi(px));
            for c in 0..3 {
                let want = tau.exp() * acc[c] * vol;
                let got = flowed.comps[c][idx];
                assert!(
                    (want - got).abs() < 1e-6 * f.max_abs(),
                    "kernel oracle mismatch at ({px},{py},{pz}) comp {c}: {want} vs {got}"
                );
            }
        }
        // a(1) value used internally
        assert!((-(-1.0f64).exp_m1() - 0.632_120_558_828_557_7).abs() < 1e-15);
    }

    #[test]
    fn derivative_commutation_relation() {
        // d_i e^{tau Lambda} = e^{tau/2} e^{tau Lambda} d_i
        let grid = Grid3::new(48, 12.0).unwrap();
        let f = crate::rand_fields::random_solenoidal(grid, 9, 2.0);
        let tau = 0.6;
        let lhs = derivative_multi(&apply_lambda_semigroup(&f, tau).unwrap().field, [1, 0, 0]);
        let mut rhs = apply_lambda_semigroup(&derivative_multi(&f, [1, 0, 0]), tau)
            .unwrap()
            .field;
        rhs.scale((0.5 * tau).exp());
        let err = core_max_diff(grid, &lhs, &rhs, grid.half_width() / 2.0);
        assert!(err < 1e-6 * lhs.max_abs().max(1e-12), "commutation error {err}");
    }

    #[test]
    fn continuous_mode_properties() {
        let grid = Grid3::new(48, 12.0).unwrap();
        let lambda = -2.0;
        let psi = eval_continuous_mode(lambda, grid).unwrap();
        // third component identically zero
        assert!(psi.comps[2].iter().all(|v| v.abs() < 1e-14));
        // divergence-free
        let div = operators::divergence_max(&psi.to_spectral());
        assert!(div < 1e-10 * psi.max_abs(), "div {div}");
        // eigenrelation through the semigroup, core region, relaxed tolerance
        let tau = 1.0;
        let flowed = apply_lambda_semigroup(&psi, tau).unwrap().field;
        let mut want = psi.clone();
        want.scale((lambda * tau).exp());
        let err = core_max_diff(grid, &flowed, &want, grid.half_width() / 2.0);
        assert!(
            err < 1e-3 * psi.max_abs(),
            "psi_lambda eigenrelation error {err}"
        );
        // rejected parameters
        assert!(eval_continuous_mode(0.0, grid).is_err());
    }

    #[test]
    fn smoothing_bound_flat_in_tau() {
        let grid = Grid3::new(32, 10.0).unwrap();
        let taus = [0.05, 0.1, 0.25, 0.5, 1.0];
        let m = WeightExponent::new(2.0).unwrap();
        // p = q = 2, alpha = 0: plain decay, ratio flat
        let rep = verify_smoothing_bound(2.0, 2.0, [0, 0, 0], &taus, m, grid, 3, 17).unwrap();
        assert!(rep.small_tau_trend < 3.0, "trend {}", rep.small_tau_trend);
        // p = 2, q = 3/2, alpha = e_1: the a(tau)^{3/4+1/2-...} compensation
        let rep2 = verify_smoothing_bound(2.0, 1.5, [1, 0, 0], &taus, m, grid, 3, 18).unwrap();
        assert!(rep2.small_tau_trend < 3.0, "trend {}", rep2.small_tau_trend);
        assert!(verify_smoothing_bound(1.5, 2.0, [0, 0, 0], &taus, m, grid, 1, 0).is_err());
    }

    #[test]
    fn smoothing_bound_eigenfield_decay() {
        let grid = Grid3::new(48, 12.0).unwrap();
        let f1 = basis::sample(BasisLabel::parse("f1").unwrap(), grid);
        let m = WeightExponent::new(2.0).unwrap();
        let denom = field::weighted_lp_norm(&f1, m, 2.0).unwrap();
        for tau in [0.5, 1.0, 2.0] {
            let flowed = apply_lambda_semigroup(&f1, tau).unwrap().field;
            let num = field::weighted_lp_norm(&flowed, m, 2.0).unwrap();
            let ratio = num / denom;
            assert!(
                (ratio - (-tau).exp()).abs() < 1e-4,
                "eigen decay ratio {ratio} vs {}",
                (-tau).exp()
            );
        }
    }
}
