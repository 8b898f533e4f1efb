//! Velocity reconstruction from vorticity and the associated spectral
//! vector calculus: curl, divergence, Leray projection.
//!
//! The Biot-Savart convolution is implemented as the spectral inversion
//! v^(k) = i k x w^(k) / |k|^2 on the periodic box, which agrees with the
//! free-space law up to periodic images; far-field claims are delegated to
//! the closed forms in `basis`. The mean vorticity mode produces zero
//! velocity.

use crate::field::{ScalarFieldR, VectorFieldK, VectorFieldR, C64};
use crate::operators;

/// Spectral Biot-Savart inversion, spectral-in spectral-out.
pub fn velocity_spectral(w: &VectorFieldK) -> VectorFieldK {
    operators::map_spectral(w, |kx, ky, kz, wv| {
        let k2 = kx * kx + ky * ky + kz * kz;
        if k2 == 0.0 {
            return [C64::new(0.0, 0.0); 3];
        }
        let ik = C64::new(0.0, 1.0 / k2);
        [
            ik * (ky * wv[2] - kz * wv[1]),
            ik * (kz * wv[0] - kx * wv[2]),
            ik * (kx * wv[1] - ky * wv[0]),
        ]
    })
}

/// Velocity field from a (approximately divergence-free) vorticity field.
/// A nonzero mean vorticity mode is ignored; callers can inspect it via
/// `VectorFieldK::mean_mode`.
pub fn velocity_from_vorticity(w: &VectorFieldR) -> VectorFieldR {
    velocity_spectral(&w.to_spectral()).to_physical()
}

/// Spectral curl, spectral-in spectral-out. Nyquist modes are zeroed.
pub fn curl_spectral(f: &VectorFieldK) -> VectorFieldK {
    operators::map_spectral(f, |kx, ky, kz, v| {
        let i = C64::new(0.0, 1.0);
        [
            i * (ky * v[2] - kz * v[1]),
            i * (kz * v[0] - kx * v[2]),
            i * (kx * v[1] - ky * v[0]),
        ]
    })
}

pub fn curl(f: &VectorFieldR) -> VectorFieldR {
    curl_spectral(&f.to_spectral()).to_physical()
}

/// Spectral divergence as a real scalar field.
pub fn divergence(f: &VectorFieldR) -> ScalarFieldR {
    operators::divergence_field(&f.to_spectral())
}

/// Leray projection onto divergence-free fields:
/// v^ <- v^ - k (k . v^)/|k|^2, mean mode untouched. Idempotent.
pub fn leray_project_spectral(f: &VectorFieldK) -> VectorFieldK {
    operators::map_spectral(f, |kx, ky, kz, v| {
        let k2 = kx * kx + ky * ky + kz * kz;
        if k2 == 0.0 {
            return v;
        }
        let kdotv = (v[0] * kx + v[1] * ky + v[2] * kz) / k2;
        [
            v[0] - kdotv * kx,
            v[1] - kdotv * ky,
            v[2] - kdotv * kz,
        ]
    })
}

pub fn leray_project(f: &VectorFieldR) -> VectorFieldR {
    leray_project_spectral(&f.to_spectral()).to_physical()
}
