//! Seeded random test fields: Gaussian-filtered white noise, Gaussian
//! windowed, made solenoidal by taking a curl (curl of a decaying potential
//! decays like the potential, unlike a Leray projection, whose nonlocal part
//! would develop algebraic tails).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::biot_savart;
use crate::field::VectorFieldR;
use crate::grid::Grid3;

/// Smooth decaying random vector field (not solenoidal): componentwise
/// white noise, Gaussian low-pass in index space, Gaussian window of width
/// `sigma` in physical space.
pub fn random_smooth_vector(grid: Grid3, seed: u64, sigma: f64) -> VectorFieldR {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = grid.n();
    let mut f = VectorFieldR::zeros(grid);
    for c in 0..3 {
        for v in f.comps[c].iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    // low-pass: keep only a smooth band so the field is spectrally resolved
    let mut k = f.to_spectral();
    let kc = 3.0 * std::f64::consts::PI / grid.half_width();
    crate::operators::apply_symbol(&mut k, |k2| (-k2 / (kc * kc)).exp());
    let mut f = k.to_physical();
    let s2 = sigma * sigma;
    let plane = n * n;
    for c in 0..3 {
        crate::threading::par_chunks_mut(&mut f.comps[c], plane, |iz, chunk| {
            let z = grid.coord(iz);
            for iy in 0..n {
                let y = grid.coord(iy);
                for ix in 0..n {
                    let x = grid.coord(ix);
                    chunk[iy * n + ix] *= (-(x * x + y * y + z * z) / (2.0 * s2)).exp();
                }
            }
        });
    }
    f
}

/// Solenoidal decaying random field: curl of `random_smooth_vector`.
pub fn random_solenoidal(grid: Grid3, seed: u64, sigma: f64) -> VectorFieldR {
    biot_savart::curl(&random_smooth_vector(grid, seed, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::divergence_max;

    #[test]
    fn solenoidal_and_reproducible() {
        let grid = Grid3::new(48, 8.0).unwrap();
        let a = random_solenoidal(grid, 42, 1.0);
        let b = random_solenoidal(grid, 42, 1.0);
        for c in 0..3 {
            assert_eq!(a.comps[c], b.comps[c]);
        }
        let div = divergence_max(&a.to_spectral());
        assert!(div < 1e-11 * a.max_abs().max(1.0), "div {div}");
        assert!(a.boundary_fraction() < 1e-8);
    }

    #[test]
    fn different_seeds_differ() {
        let grid = Grid3::new(16, 6.0).unwrap();
        let a = random_solenoidal(grid, 1, 2.0);
        let b = random_solenoidal(grid, 2, 2.0);
        assert!(a.comps[0] != b.comps[0]);
    }
}
