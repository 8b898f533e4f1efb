//! Spectral differential operators on half-spectrum fields.
//!
//! Nyquist modes are zeroed by every differentiation so that derivatives of
//! real fields stay real and antisymmetric.

use crate::field::{ScalarFieldR, VectorFieldK, VectorFieldR, C64};
use crate::fft;
use crate::grid::Grid3;
use crate::threading;

/// Apply `out[c] = i k_{axis(c)} * ...` style multipliers in a fused pass:
/// the closure receives (kx, ky, kz, [w1, w2, w3]) and returns the new triple.
pub fn map_spectral<F>(w: &VectorFieldK, f: F) -> VectorFieldK
where
    F: Fn(f64, f64, f64, [C64; 3]) -> [C64; 3] + Sync,
{
    let grid = w.grid;
    let n = grid.n();
    let nh = grid.n_half();
    let mut out = VectorFieldK::zeros(grid);
    let plane = n * nh;
    let (o0, rest) = out.comps.split_at_mut(1);
    let (o1, o2) = rest.split_at_mut(1);
    threading::pool().install(|| {
        use rayon::prelude::*;
        o0[0]
            .par_chunks_mut(plane)
            .zip(o1[0].par_chunks_mut(plane))
            .zip(o2[0].par_chunks_mut(plane))
            .enumerate()
            .for_each(|(iz, ((p0, p1), p2))| {
                let kz = nyquist_zeroed(grid, iz);
                for iy in 0..n {
                    let ky = nyquist_zeroed(grid, iy);
                    let row = iy * nh;
                    for ix in 0..nh {
                        let kx = if ix == n / 2 {
                            0.0
                        } else {
                            grid.wavenumber_half(ix)
                        };
                        let i = iz * plane + row + ix;
                        let v = f(
                            kx,
                            ky,
                            kz,
                            [w.comps[0][i], w.comps[1][i], w.comps[2][i]],
                        );
                        p0[row + ix] = v[0];
                        p1[row + ix] = v[1];
                        p2[row + ix] = v[2];
                    }
                }
            });
    });
    out
}

#[inline]
fn nyquist_zeroed(grid: Grid3, j: usize) -> f64 {
    if grid.signed_index(j) == -(grid.n() as i64) / 2 {
        0.0
    } else {
        grid.wavenumber(j)
    }
}

/// In-place pointwise multiply by a real radial spectral symbol s(|k|^2)
/// (heat factors and similar). Includes Nyquist modes.
pub fn apply_symbol<F>(w: &mut VectorFieldK, f: F)
where
    F: Fn(f64) -> f64 + Sync,
{
    let grid = w.grid;
    let n = grid.n();
    let nh = grid.n_half();
    let plane = n * nh;
    for c in 0..3 {
        threading::par_chunks_mut(&mut w.comps[c], plane, |iz, chunk| {
            let kz = grid.wavenumber(iz);
            for iy in 0..n {
                let ky = grid.wavenumber(iy);
                for ix in 0..nh {
                    let kx = grid.wavenumber_half(ix);
                    let s = f(kx * kx + ky * ky + kz * kz);
                    chunk[iy * nh + ix] *= s;
                }
            }
        });
    }
}

/// Spectral gradient of one spectral component: three real fields.
pub fn gradient_scalar(grid: Grid3, spec: &[C64]) -> [Vec<f64>; 3] {
    let n = grid.n();
    let nh = grid.n_half();
    let eng = fft::engine(n);
    let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    let mut scratch = vec![C64::new(0.0, 0.0); grid.spectral_len()];
    for (axis, dst) in out.iter_mut().enumerate() {
        let plane = n * nh;
        threading::par_chunks_mut(&mut scratch, plane, |iz, chunk| {
            let kz = nyquist_zeroed(grid, iz);
            for iy in 0..n {
                let ky = nyquist_zeroed(grid, iy);
                for ix in 0..nh {
                    let kx = if ix == n / 2 {
                        0.0
                    } else {
                        grid.wavenumber_half(ix)
                    };
                    let k = [kx, ky, kz][axis];
                    let i = iz * plane + iy * nh + ix;
                    chunk[iy * nh + ix] = C64::new(0.0, k) * spec[i];
                }
            }
        });
        eng.inverse(&mut scratch, dst);
    }
    out
}

/// Lambda = Delta + (xi . nabla)/2 + 1 applied via spectral derivatives and a
/// pointwise drift term; returns a real field.
pub fn apply_lambda_operator(w: &VectorFieldR) -> VectorFieldR {
    apply_drift_operator(w, 0.5, 1.0)
}

/// Lambda* = Delta - (xi . nabla)/2 - 1/2, the formal adjoint.
pub fn apply_lambda_star_operator(w: &VectorFieldR) -> VectorFieldR {
    apply_drift_operator(w, -0.5, -0.5)
}

fn apply_drift_operator(w: &VectorFieldR, drift: f64, constant: f64) -> VectorFieldR {
    let grid = w.grid;
    let n = grid.n();
    let eng = fft::engine(n);
    let spec = w.to_spectral();
    let mut out = VectorFieldR::zeros(grid);

    let mut lap_spec = vec![C64::new(0.0, 0.0); grid.spectral_len()];
    let mut lap = vec![0.0; grid.len()];
    for c in 0..3 {
        // Laplacian (all modes, real symbol)
        let nh = grid.n_half();
        let plane = n * nh;
        threading::par_chunks_mut(&mut lap_spec, plane, |iz, chunk| {
            let kz = grid.wavenumber(iz);
            for iy in 0..n {
                let ky = grid.wavenumber(iy);
                for ix in 0..nh {
                    let kx = grid.wavenumber_half(ix);
                    let k2 = kx * kx + ky * ky + kz * kz;
                    let i = iz * plane + iy * nh + ix;
                    chunk[iy * nh + ix] = spec.comps[c][i] * (-k2);
                }
            }
        });
        eng.inverse(&mut lap_spec, &mut lap);

        let grad = gradient_scalar(grid, &spec.comps[c]);
        let wc = &w.comps[c];
        let rplane = n * n;
        threading::par_chunks_mut(&mut out.comps[c], rplane, |iz, chunk| {
            let z = grid.coord(iz);
            for iy in 0..n {
                let y = grid.coord(iy);
                for ix in 0..n {
                    let x = grid.coord(ix);
                    let i = iz * rplane + iy * n + ix;
                    let adv = x * grad[0][i] + y * grad[1][i] + z * grad[2][i];
                    chunk[iy * n + ix] = lap[i] + drift * adv + constant * wc[i];
                }
            }
        });
    }
    out
}

/// Max-norm of the spectral divergence over the physical grid.
pub fn divergence_max(w: &VectorFieldK) -> f64 {
    let div = divergence_spectral(w);
    let eng = fft::engine(w.grid.n());
    let mut scratch = div;
    let mut real = vec![0.0; w.grid.len()];
    eng.inverse(&mut scratch, &mut real);
    let n = w.grid.n();
    threading::par_max_index(n, |iz| {
        real[iz * n * n..(iz + 1) * n * n]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    })
}

/// Spectral divergence coefficients i k . w.
pub fn divergence_spectral(w: &VectorFieldK) -> Vec<C64> {
    let grid = w.grid;
    let n = grid.n();
    let nh = grid.n_half();
    let plane = n * nh;
    let mut out = vec![C64::new(0.0, 0.0); grid.spectral_len()];
    threading::par_chunks_mut(&mut out, plane, |iz, chunk| {
        let kz = nyquist_zeroed(grid, iz);
        for iy in 0..n {
            let ky = nyquist_zeroed(grid, iy);
            for ix in 0..nh {
                let kx = if ix == n / 2 {
                    0.0
                } else {
                    grid.wavenumber_half(ix)
                };
                let i = iz * plane + iy * nh + ix;
                chunk[iy * nh + ix] = C64::new(0.0, 1.0)
                    * (w.comps[0][i] * kx + w.comps[1][i] * ky + w.comps[2][i] * kz);
            }
        }
    });
    out
}

/// Real-space divergence field.
pub fn divergence_field(w: &VectorFieldK) -> ScalarFieldR {
    let mut spec = divergence_spectral(w);
    let eng = fft::engine(w.grid.n());
    let mut out = ScalarFieldR::zeros(w.grid);
    eng.inverse(&mut spec, &mut out.data);
    out
}
