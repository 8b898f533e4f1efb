//! Moment functionals, trajectory series, asymptotic coefficients, expansion
//! residuals, decay fits, self-similar profile comparisons and the weighted
//! Biot-Savart estimate sampler.
//!
//! Everything a trajectory analysis needs is accumulated online by
//! `StrideProbe` while a run is in flight, so no 3D history is stored:
//! residual norms against the self-similar approximations are reconstructed
//! afterwards from weighted pairings with the eigenfields plus small Gram
//! matrices.

use std::collections::BTreeMap;

use crate::basis::{self, BasisLabel, Family, S_PAIRS};
use crate::biot_savart;
use crate::error::{CoreError, Result};
use crate::evolution::Trajectory;
use crate::field::{self, VectorFieldK, VectorFieldR, WeightExponent, C64};
use crate::fitting;
use crate::grid::Grid3;
use crate::threading;

/// Monomial order used throughout: 1, x, y, z, x^2, y^2, z^2, xy, xz, yz.
pub const N_MONO: usize = 10;
pub const MONO_DEGREE: [u32; N_MONO] = [0, 1, 1, 1, 2, 2, 2, 2, 2, 2];

#[inline]
pub(crate) fn mono_values(x: f64, y: f64, z: f64) -> [f64; N_MONO] {
    [1.0, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z]
}

/// Integrals int w_c xi^alpha dxi for |alpha| <= 2, per component.
#[derive(Debug, Clone)]
pub struct MonomialMoments {
    pub per_comp: [[f64; N_MONO]; 3],
}

impl MonomialMoments {
    pub fn component(&self, c: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.per_comp[c]
            .iter()
            .enumerate()
            .map(|(i, v)| (MONO_DEGREE[i], *v))
    }
}

pub fn monomial_moments(w: &VectorFieldR) -> MonomialMoments {
    let grid = w.grid;
    let n = grid.n();
    let sums = threading::par_sum_index(n, 3 * N_MONO, |iz, acc| {
        let z = grid.coord(iz);
        let plane = n * n;
        for iy in 0..n {
            let y = grid.coord(iy);
            for ix in 0..n {
                let x = grid.coord(ix);
                let mv = mono_values(x, y, z);
                let i = iz * plane + iy * n + ix;
                for c in 0..3 {
                    let wv = w.comps[c][i];
                    for (a, m) in mv.iter().enumerate() {
                        acc[c * N_MONO + a] += wv * m;
                    }
                }
            }
        }
    });
    let vol = grid.cell_volume();
    let mut per_comp = [[0.0; N_MONO]; 3];
    for c in 0..3 {
        for a in 0..N_MONO {
            per_comp[c][a] = sums[c * N_MONO + a] * vol;
        }
    }
    MonomialMoments { per_comp }
}

// ---------------------------------------------------------------------------
// polynomial tables for the eigenfields (without the Gaussian factor) and the
// dual families
// ---------------------------------------------------------------------------

const LEVI: [[[f64; 3]; 3]; 3] = {
    let mut e = [[[0.0; 3]; 3]; 3];
    e[0][1][2] = 1.0;
    e[1][2][0] = 1.0;
    e[2][0][1] = 1.0;
    e[0][2][1] = -1.0;
    e[2][1][0] = -1.0;
    e[1][0][2] = -1.0;
    e
};

type PolyTable = [[f64; N_MONO]; 3];

/// p_i component c: (1/2) sum_a LEVI[c][i][a] xi_a
fn p_poly(i: usize) -> PolyTable {
    let mut t = [[0.0; N_MONO]; 3];
    for (c, row) in t.iter_mut().enumerate() {
        for a in 0..3 {
            row[1 + a] += 0.5 * LEVI[c][i][a];
        }
    }
    t
}

/// q_i: diagonal (2 - xi_i^2)/2, off-diagonal xi_i xi_c / 2
fn q_poly(i: usize) -> PolyTable {
    let mut t = [[0.0; N_MONO]; 3];
    for (c, row) in t.iter_mut().enumerate() {
        if c == i {
            row[0] += 1.0;
            row[4 + i] -= 0.5;
        } else {
            row[mono_index_pair(i, c)] += 0.5;
        }
    }
    t
}

/// r_ij over S (polynomials of degree 2).
fn r_poly(pair: usize) -> PolyTable {
    let mut t = [[0.0; N_MONO]; 3];
    let put = |t: &mut PolyTable, c: usize, a: usize, b: usize, v: f64| {
        t[c][mono_index_pair(a, b)] += v;
    };
    match S_PAIRS[pair] {
        (0, 0) => put(&mut t, 1, 0, 2, 0.5),
        (1, 1) => put(&mut t, 0, 1, 2, -0.5),
        (0, 1) => {
            put(&mut t, 0, 0, 2, -0.5);
            put(&mut t, 1, 1, 2, 0.5);
        }
        (0, 2) => {
            put(&mut t, 0, 0, 1, 0.5);
            put(&mut t, 2, 1, 2, -0.5);
        }
        (1, 2) => {
            put(&mut t, 1, 0, 1, -0.5);
            put(&mut t, 2, 0, 2, 0.5);
        }
        _ => unreachable!(),
    }
    t
}

/// Index of the degree-2 monomial xi_a xi_b in the monomial list.
fn mono_index_pair(a: usize, b: usize) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    match (lo, hi) {
        (0, 0) => 4,
        (1, 1) => 5,
        (2, 2) => 6,
        (0, 1) => 7,
        (0, 2) => 8,
        (1, 2) => 9,
        _ => unreachable!(),
    }
}

/// f_i / G = p_i (degree-1 polynomial table).
fn f_poly(i: usize) -> PolyTable {
    p_poly(i)
}

/// g_i / G: ((4 - |xi|^2) e_i + xi_i xi) / 4
fn g_poly(i: usize) -> PolyTable {
    let mut t = [[0.0; N_MONO]; 3];
    for (c, row) in t.iter_mut().enumerate() {
        if c == i {
            row[0] += 1.0;
            for a in 0..3 {
                row[4 + a] -= 0.25;
            }
            row[mono_index_pair(i, c)] += 0.25;
        } else {
            row[mono_index_pair(i, c)] += 0.25;
        }
    }
    t
}

/// h_ij / G = -(xi_i p_j + xi_j p_i)/(2 G scale): -(1/4) sum_a
/// (xi_i LEVI[c][j][a] + xi_j LEVI[c][i][a]) xi_a
fn h_poly(pair: usize) -> PolyTable {
    let (i, j) = S_PAIRS[pair];
    let mut t = [[0.0; N_MONO]; 3];
    for (c, row) in t.iter_mut().enumerate() {
        for a in 0..3 {
            let coef = -0.25 * (LEVI[c][j][a]);
            if coef != 0.0 {
                row[mono_index_pair(i, a)] += coef;
            }
            let coef = -0.25 * (LEVI[c][i][a]);
            if coef != 0.0 {
                row[mono_index_pair(j, a)] += coef;
            }
        }
    }
    t
}

/// Canonical order of the 11 slow eigenfields and their names.
pub const EIGEN_NAMES: [&str; 11] = [
    "f1", "f2", "f3", "g1", "g2", "g3", "h11", "h12", "h13", "h22", "h23",
];

pub(crate) fn eigen_label(i: usize) -> BasisLabel {
    if i < 3 {
        BasisLabel::new(Family::F, i).unwrap()
    } else if i < 6 {
        BasisLabel::new(Family::G, i - 3).unwrap()
    } else {
        BasisLabel::new(Family::H, i - 6).unwrap()
    }
}

fn eigen_poly(i: usize) -> PolyTable {
    if i < 3 {
        f_poly(i)
    } else if i < 6 {
        g_poly(i - 3)
    } else {
        h_poly(i - 6)
    }
}

fn dual_poly(i: usize) -> PolyTable {
    if i < 3 {
        p_poly(i)
    } else if i < 6 {
        q_poly(i - 3)
    } else {
        r_poly(i - 6)
    }
}

#[inline]
fn contract(table: &PolyTable, sums: &[[f64; N_MONO]; 3]) -> f64 {
    let mut acc = 0.0;
    for c in 0..3 {
        for a in 0..N_MONO {
            let coef = table[c][a];
            if coef != 0.0 {
                acc += coef * sums[c][a];
            }
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// moment functionals
// ---------------------------------------------------------------------------

/// The slow moment functionals of a vorticity field: the dual pairings
/// beta_i, gamma_i, zeta_ij, and the symmetrized second-moment tensor
/// M^i_{jk} = int xi_j xi_k w_i.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub beta: [f64; 3],
    pub gamma: [f64; 3],
    /// Over S in the order (11), (12), (13), (22), (23).
    pub zeta: [f64; 5],
    /// m_tensor[i][jk] with jk in the order 11, 22, 33, 12, 13, 23.
    pub m_tensor: [[f64; 6]; 3],
}

impl MomentSet {
    pub fn zeta_named(&self, i: usize, j: usize) -> f64 {
        let pos = S_PAIRS
            .iter()
            .position(|&p| p == (i, j))
            .expect("pair not in S");
        self.zeta[pos]
    }
}

pub fn moments(w: &VectorFieldR) -> MomentSet {
    let mm = monomial_moments(w);
    moments_from_monomials(&mm.per_comp)
}

pub(crate) fn moments_from_monomials(sums: &[[f64; N_MONO]; 3]) -> MomentSet {
    let beta = std::array::from_fn(|i| contract(&dual_poly(i), sums));
    let gamma = std::array::from_fn(|i| contract(&dual_poly(3 + i), sums));
    let zeta = std::array::from_fn(|i| contract(&dual_poly(6 + i), sums));
    let mut m_tensor = [[0.0; 6]; 3];
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    for i in 0..3 {
        for (slot, &(j, k)) in pairs.iter().enumerate() {
            m_tensor[i][slot] = sums[i][mono_index_pair(j, k)];
        }
    }
    MomentSet {
        beta,
        gamma,
        zeta,
        m_tensor,
    }
}

/// Residuals of the divergence-free moment identities: the three vanishing
/// component integrals, the six symmetrized first moments, and the ten
/// cyclically symmetrized second moments. All normalized by ||w||_2-weighted
/// scale by the caller; raw values are reported here.
#[derive(Debug, Clone)]
pub struct MomentIdentityReport {
    pub zeroth_max: f64,
    pub first_max: f64,
    pub second_max: f64,
    /// || w ||_{m=2}, the natural normalization for degree <= 2 moments.
    pub scale: f64,
}

impl MomentIdentityReport {
    pub fn relative_max(&self) -> f64 {
        let s = self.scale.max(1e-300);
        (self.zeroth_max.max(self.first_max).max(self.second_max)) / s
    }
}

pub fn check_moment_identities(w: &VectorFieldR) -> MomentIdentityReport {
    let mm = monomial_moments(w);
    let scale = field::weighted_norm(w, WeightExponent::new(2.0).unwrap());
    identity_report_from_monomials(&mm.per_comp, scale)
}

pub(crate) fn identity_report_from_monomials(
    sums: &[[f64; N_MONO]; 3],
    scale: f64,
) -> MomentIdentityReport {
    let mut zeroth: f64 = 0.0;
    for c in 0..3 {
        zeroth = zeroth.max(sums[c][0].abs());
    }
    // first: int (xi_i w_j + xi_j w_i) over the six unordered pairs
    let mut first: f64 = 0.0;
    for i in 0..3 {
        for j in i..3 {
            let v = sums[j][1 + i] + sums[i][1 + j];
            first = first.max(v.abs());
        }
    }
    // second: int (xi_i xi_j w_k + xi_j xi_k w_i + xi_k xi_i w_j) over the
    // ten unordered index multisets
    let mut second: f64 = 0.0;
    for i in 0..3 {
        for j in i..3 {
            for k in j..3 {
                let v = sums[k][mono_index_pair(i, j)]
                    + sums[i][mono_index_pair(j, k)]
                    + sums[j][mono_index_pair(k, i)];
                second = second.max(v.abs());
            }
        }
    }
    MomentIdentityReport {
        zeroth_max: zeroth,
        first_max: first,
        second_max: second,
        scale,
    }
}

// ---------------------------------------------------------------------------
// stride probe
// ---------------------------------------------------------------------------

/// Per-run precomputed kernels for the online diagnostics.
pub struct StrideProbe {
    grid: Grid3,
    /// weight exponents whose norms are recorded (always contains 0, 2, 4, 5)
    norm_ms: Vec<f64>,
    /// rho^{2m} fields for the nonzero m in norm_ms
    rho_kernels: Vec<(f64, Vec<f64>)>,
    /// G rho^{2m} kernels for the weighted eigenfield pairings at m = 4, 5
    gw_kernels: [(f64, Vec<f64>); 2],
    /// exp(-|k|^2) / |k|^2 on the half lattice (0 at k = 0)
    spec_kernel: Vec<f64>,
    eigen_tables: Vec<PolyTable>,
}

/// One stride's worth of named diagnostics.
pub type StrideRecord = Vec<(String, f64)>;

impl StrideProbe {
    pub fn new(grid: Grid3, run_m: f64) -> Self {
        let mut norm_ms = vec![0.0, 2.0, 4.0, 5.0];
        if !norm_ms.iter().any(|&m| (m - run_m).abs() < 1e-12) {
            norm_ms.push(run_m);
        }
        let n = grid.n();
        let rho_field = |two_m: f64| -> Vec<f64> {
            let mut out = vec![0.0; grid.len()];
            threading::par_chunks_mut(&mut out, n * n, |iz, chunk| {
                let z = grid.coord(iz);
                for iy in 0..n {
                    let y = grid.coord(iy);
                    for ix in 0..n {
                        let x = grid.coord(ix);
                        let rho = 1.0 + (x * x + y * y + z * z).sqrt();
                        chunk[iy * n + ix] = field::rho_pow(rho, two_m);
                    }
                }
            });
            out
        };
        let rho_kernels: Vec<(f64, Vec<f64>)> = norm_ms
            .iter()
            .filter(|&&m| m > 0.0)
            .map(|&m| (m, rho_field(2.0 * m)))
            .collect();
        let gw = |two_m: f64| -> Vec<f64> {
            let mut out = vec![0.0; grid.len()];
            threading::par_chunks_mut(&mut out, n * n, |iz, chunk| {
                let z = grid.coord(iz);
                for iy in 0..n {
                    let y = grid.coord(iy);
                    for ix in 0..n {
                        let x = grid.coord(ix);
                        let rho = 1.0 + (x * x + y * y + z * z).sqrt();
                        chunk[iy * n + ix] =
                            basis::eval_g(x, y, z) * field::rho_pow(rho, two_m);
                    }
                }
            });
            out
        };
        let gw_kernels = [(4.0, gw(8.0)), (5.0, gw(10.0))];
        let nh = grid.n_half();
        let mut spec_kernel = vec![0.0; grid.spectral_len()];
        threading::par_chunks_mut(&mut spec_kernel, n * nh, |iz, chunk| {
            let kz = grid.wavenumber(iz);
            for iy in 0..n {
                let ky = grid.wavenumber(iy);
                for ix in 0..nh {
                    let kx = grid.wavenumber_half(ix);
                    let k2 = kx * kx + ky * ky + kz * kz;
                    chunk[iy * nh + ix] = if k2 == 0.0 { 0.0 } else { (-k2).exp() / k2 };
                }
            }
        });
        let eigen_tables = (0..11).map(eigen_poly).collect();
        Self {
            grid,
            norm_ms,
            rho_kernels,
            gw_kernels,
            spec_kernel,
            eigen_tables,
        }
    }

    pub fn norm_exponents(&self) -> &[f64] {
        &self.norm_ms
    }

    /// Measure one stride. `w_spec`/`w_real` are the state, `v_spec`/`v_real`
    /// the Biot-Savart velocity.
    pub fn measure(
        &self,
        w_spec: &VectorFieldK,
        w_real: &VectorFieldR,
        v_spec: &VectorFieldK,
        v_real: &VectorFieldR,
    ) -> StrideRecord {
        let grid = self.grid;
        let n = grid.n();
        let vol = grid.cell_volume();
        let mut rec: StrideRecord = Vec::with_capacity(96);

        // ---- real-space fused pass over w ---------------------------------
        // accumulators: plain monomials (30), G rho^8 (30), G rho^10 (30),
        // weighted norms (len norm_ms)
        let nm = self.norm_ms.len();
        let acc = threading::par_sum_index(n, 90 + nm, |iz, acc| {
            let plane = n * n;
            let z = grid.coord(iz);
            for iy in 0..n {
                let y = grid.coord(iy);
                for ix in 0..n {
                    let x = grid.coord(ix);
                    let i = iz * plane + iy * n + ix;
                    let mv = mono_values(x, y, z);
                    let g4 = self.gw_kernels[0].1[i];
                    let g5 = self.gw_kernels[1].1[i];
                    let mut mag2 = 0.0;
                    for c in 0..3 {
                        let wv = w_real.comps[c][i];
                        mag2 += wv * wv;
                        for a in 0..N_MONO {
                            acc[c * N_MONO + a] += wv * mv[a];
                            acc[30 + c * N_MONO + a] += wv * mv[a] * g4;
                            acc[60 + c * N_MONO + a] += wv * mv[a] * g5;
                        }
                    }
                    acc[90] += mag2; // m = 0
                    for (j, (_m, ker)) in self.rho_kernels.iter().enumerate() {
                        acc[91 + j] += mag2 * ker[i];
                    }
                }
            }
        });
        let mut plain = [[0.0; N_MONO]; 3];
        let mut t4 = [[0.0; N_MONO]; 3];
        let mut t5 = [[0.0; N_MONO]; 3];
        for c in 0..3 {
            for a in 0..N_MONO {
                plain[c][a] = acc[c * N_MONO + a] * vol;
                t4[c][a] = acc[30 + c * N_MONO + a] * vol;
                t5[c][a] = acc[60 + c * N_MONO + a] * vol;
            }
        }
        rec.push(("norm_m0".into(), (acc[90] * vol).sqrt()));
        for (j, (m, _)) in self.rho_kernels.iter().enumerate() {
            rec.push((Trajectory::norm_key_value(*m), (acc[91 + j] * vol).sqrt()));
        }
        rec.push(("w_linf".into(), w_real.max_abs()));

        let ms = moments_from_monomials(&plain);
        for i in 0..3 {
            rec.push((format!("beta{}", i + 1), ms.beta[i]));
        }
        for i in 0..3 {
            rec.push((format!("gamma{}", i + 1), ms.gamma[i]));
        }
        for (s, &(i, j)) in S_PAIRS.iter().enumerate() {
            rec.push((format!("zeta{}{}", i + 1, j + 1), ms.zeta[s]));
        }
        let pair_names = ["11", "22", "33", "12", "13", "23"];
        for i in 0..3 {
            for (slot, nm) in pair_names.iter().enumerate() {
                rec.push((format!("M{}_{}", i + 1, nm), ms.m_tensor[i][slot]));
            }
        }
        let scale_m2 = {
            // ||w||_2 from the recorded norms
            let key = 2.0;
            self.rho_kernels
                .iter()
                .position(|(m, _)| (*m - key).abs() < 1e-12)
                .map(|j| (acc[91 + j] * vol).sqrt())
                .unwrap_or(0.0)
        };
        let ident = identity_report_from_monomials(&plain, scale_m2);
        rec.push(("ident0".into(), ident.zeroth_max));
        rec.push(("ident1".into(), ident.first_max));
        rec.push(("ident2".into(), ident.second_max));

        // weighted eigenfield pairings <w, rho^{2m} B_i>
        for (slot, sums) in [(4usize, &t4), (5usize, &t5)] {
            for (i, name) in EIGEN_NAMES.iter().enumerate() {
                rec.push((
                    format!("wpair{slot}_{name}"),
                    contract(&self.eigen_tables[i], sums),
                ));
            }
        }

        // ---- real-space pass over v ---------------------------------------
        let vacc = threading::par_sum_index(n, 9 + 6 + 1, |iz, acc| {
            let plane = n * n;
            let z = grid.coord(iz);
            for iy in 0..n {
                let y = grid.coord(iy);
                for ix in 0..n {
                    let x = grid.coord(ix);
                    let i = iz * plane + iy * n + ix;
                    let xi = [x, y, z];
                    let vv = [v_real.comps[0][i], v_real.comps[1][i], v_real.comps[2][i]];
                    for k in 0..3 {
                        for l in 0..3 {
                            acc[k * 3 + l] += xi[k] * vv[l];
                        }
                    }
                    let mut slot = 9;
                    for k in 0..3 {
                        for l in k..3 {
                            acc[slot] += vv[k] * vv[l];
                            slot += 1;
                        }
                    }
                    let mag2 = vv[0] * vv[0] + vv[1] * vv[1] + vv[2] * vv[2];
                    acc[15] += mag2 * mag2 * mag2;
                }
            }
        });
        for k in 0..3 {
            for l in 0..3 {
                rec.push((format!("bmat_{}{}", k + 1, l + 1), vacc[k * 3 + l] * vol));
            }
        }
        let vv_order = ["11", "12", "13", "22", "23", "33"];
        for (slot, nm) in vv_order.iter().enumerate() {
            rec.push((format!("vv_{nm}"), vacc[9 + slot] * vol));
        }
        rec.push(("v_l6".into(), (vacc[15] * vol).powf(1.0 / 6.0)));
        rec.push(("v_linf".into(), v_real.max_abs()));

        // ---- spectral fused pass ------------------------------------------
        let nh = grid.n_half();
        let keep = grid.dealias_keep();
        let sacc = threading::par_sum_index(n, 1 + 22 + 1 + 2, |iz, acc| {
            let plane = n * nh;
            let sz = grid.signed_index(iz);
            let kz = grid.wavenumber(iz);
            for iy in 0..n {
                let sy = grid.signed_index(iy);
                let ky = grid.wavenumber(iy);
                for ix in 0..nh {
                    let kx = grid.wavenumber_half(ix);
                    let k2 = kx * kx + ky * ky + kz * kz;
                    let i = iz * plane + iy * nh + ix;
                    let weight = if ix == 0 || ix == nh - 1 { 1.0 } else { 2.0 };
                    let v = [v_spec.comps[0][i], v_spec.comps[1][i], v_spec.comps[2][i]];
                    let wc = [w_spec.comps[0][i], w_spec.comps[1][i], w_spec.comps[2][i]];
                    let vmag2 = v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr();
                    acc[0] += weight * vmag2;
                    // velocity pairings <v, v^{B_j}>: sum over lattice of
                    // (-1)^{parity} c_v . conj(vB_hat) with Hermitian weight
                    let parity = ((ix as i64 + sy + sz).rem_euclid(2)) as usize;
                    let sign = if parity == 0 { 1.0 } else { -1.0 };
                    if k2 > 0.0 && self.spec_kernel[i] > 0.0 {
                        for (j, _) in EIGEN_NAMES.iter().enumerate() {
                            let lbl = eigen_velocity_label(j);
                            let (re, im) = basis::fourier_eigenfield(lbl, kx, ky, kz);
                            let mut dot = C64::new(0.0, 0.0);
                            for c in 0..3 {
                                dot += v[c] * C64::new(re[c], -im[c]);
                            }
                            acc[1 + j] += weight * sign * dot.re;
                        }
                    }
                    // divergence L2
                    let div = wc[0] * kx + wc[1] * ky + wc[2] * kz;
                    acc[12] += weight * div.norm_sqr();
                    // high-band energy fraction of w
                    let wmag2 = wc[0].norm_sqr() + wc[1].norm_sqr() + wc[2].norm_sqr();
                    acc[13] += weight * wmag2;
                    let hi = (ix as i64) > keep / 2
                        || sy.abs() > keep / 2
                        || sz.abs() > keep / 2;
                    if hi {
                        acc[14] += weight * wmag2;
                    }
                }
            }
        });
        let box_vol = 8.0 * grid.half_width().powi(3);
        rec.push(("v_l2".into(), (sacc[0] * box_vol).sqrt()));
        for (j, name) in EIGEN_NAMES.iter().enumerate() {
            rec.push((format!("vpair_{name}"), sacc[1 + j]));
        }
        rec.push(("div_l2".into(), (sacc[12] * box_vol).sqrt()));
        rec.push((
            "hi_frac".into(),
            if sacc[13] > 0.0 { sacc[14] / sacc[13] } else { 0.0 },
        ));

        // symmetry residuals
        let sym = crate::manifold::symmetry_residual(w_real);
        rec.push(("sym_cyclic".into(), sym.cyclic_residual));
        rec.push(("sym_parity".into(), sym.parity_residual));

        rec
    }
}

/// Velocity-profile label matching eigenfield i: v^{f}, v^{g}, v^{h}.
fn eigen_velocity_label(i: usize) -> BasisLabel {
    if i < 3 {
        BasisLabel::new(Family::Vf, i).unwrap()
    } else if i < 6 {
        BasisLabel::new(Family::Vg, i - 3).unwrap()
    } else {
        BasisLabel::new(Family::Vh, i - 6).unwrap()
    }
}

// ---------------------------------------------------------------------------
// trajectory analysis
// ---------------------------------------------------------------------------

/// Per-stride moment coefficients together with the residuals of their
/// closed ODE system:
/// beta' = -beta, gamma' = -(3/2) gamma,
/// zeta'_{ii} = -(3/2) zeta_{ii} + (1/2) int (v_3^2 - v_i^2),
/// zeta'_{ij} = -(3/2) zeta_{ij} - int v_i v_j.
#[derive(Debug, Clone)]
pub struct CoefficientSeries {
    pub times: Vec<f64>,
    pub beta: [Vec<f64>; 3],
    pub gamma: [Vec<f64>; 3],
    pub zeta: [Vec<f64>; 5],
    pub zeta_sources: [Vec<f64>; 5],
    /// max_t |beta' + beta| etc., absolute.
    pub beta_residual: f64,
    pub gamma_residual: f64,
    pub zeta_residual: f64,
    /// the same, relative to the initial weighted norm of the run
    pub beta_residual_rel: f64,
    pub gamma_residual_rel: f64,
    pub zeta_residual_rel: f64,
}

pub fn coefficient_series(traj: &Trajectory) -> Result<CoefficientSeries> {
    let times = traj.times.clone();
    if times.len() < 3 {
        return Err(CoreError::InvalidParameter(
            "coefficient series needs at least 3 strides".into(),
        ));
    }
    let get = |k: &str| traj.series(k).map(|s| s.to_vec());
    let beta = [get("beta1")?, get("beta2")?, get("beta3")?];
    let gamma = [get("gamma1")?, get("gamma2")?, get("gamma3")?];
    let zeta = [
        get("zeta11")?,
        get("zeta12")?,
        get("zeta13")?,
        get("zeta22")?,
        get("zeta23")?,
    ];
    let vv = |nm: &str| traj.series(nm).map(|s| s.to_vec());
    let vv11 = vv("vv_11")?;
    let vv22 = vv("vv_22")?;
    let vv33 = vv("vv_33")?;
    let vv12 = vv("vv_12")?;
    let vv13 = vv("vv_13")?;
    let vv23 = vv("vv_23")?;
    // sources so that zeta' = -(3/2) zeta + source
    let len = times.len();
    let mut zeta_sources: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; len]);
    for t in 0..len {
        zeta_sources[0][t] = 0.5 * (vv33[t] - vv11[t]); // (11)
        zeta_sources[1][t] = -vv12[t]; // (12)
        zeta_sources[2][t] = -vv13[t]; // (13)
        zeta_sources[3][t] = 0.5 * (vv33[t] - vv22[t]); // (22)
        zeta_sources[4][t] = -vv23[t]; // (23)
    }

    let resid_max = |series: &Vec<f64>, rate: f64, source: Option<&Vec<f64>>| -> f64 {
        let mut worst = 0.0f64;
        for t in 1..len - 1 {
            let dt = times[t + 1] - times[t - 1];
            let deriv = (series[t + 1] - series[t - 1]) / dt;
            let mut r = deriv + rate * series[t];
            if let Some(src) = source {
                r -= src[t];
            }
            worst = worst.max(r.abs());
        }
        worst
    };
    let beta_residual = beta
        .iter()
        .map(|s| resid_max(s, 1.0, None))
        .fold(0.0, f64::max);
    let gamma_residual = gamma
        .iter()
        .map(|s| resid_max(s, 1.5, None))
        .fold(0.0, f64::max);
    let zeta_residual = zeta
        .iter()
        .zip(zeta_sources.iter())
        .map(|(s, src)| resid_max(s, 1.5, Some(src)))
        .fold(0.0, f64::max);

    let scale = traj.initial_norm().max(1e-300);
    Ok(CoefficientSeries {
        times,
        beta,
        gamma,
        zeta,
        zeta_sources,
        beta_residual,
        gamma_residual,
        zeta_residual,
        beta_residual_rel: beta_residual / scale,
        gamma_residual_rel: gamma_residual / scale,
        zeta_residual_rel: zeta_residual / scale,
    })
}

/// Coefficients of the second-order self-similar approximation, with the
/// velocity-moment matrices.
#[derive(Debug, Clone)]
pub struct AsymptoticCoefficients {
    pub b: [f64; 3],
    pub c: [f64; 3],
    /// d over S in the order (11), (12), (13), (22), (23).
    pub d: [f64; 5],
    /// skew matrix from the gamma relations b12 = gamma3, b23 = gamma1,
    /// b31 = gamma2
    pub b_matrix: [[f64; 3]; 3],
    /// direct quadrature int xi_k v_l at tau = 0 (meaningful when rho v is
    /// integrable, i.e. beta = 0 and zeta(0) = 0)
    pub b_matrix_direct: [[f64; 3]; 3],
    /// c_{kl} = int_0^{taumax} e^{3 tau/2} int v_k v_l dxi dtau
    pub c_matrix: [[f64; 3]; 3],
    /// analytic bound on the omitted tail of the c integrals, relative to
    /// the largest |c_{kl}|
    pub tail_bound: f64,
}

pub struct VelocityMomentIntegrals {
    pub c_matrix: [[f64; 3]; 3],
    pub b_matrix0: [[f64; 3]; 3],
    pub tail_bound: f64,
}

/// Time-integrate the velocity moment matrix with an analytic tail bound
/// from the fitted decay of |v|_2.
pub fn velocity_moment_integrals(traj: &Trajectory) -> Result<VelocityMomentIntegrals> {
    let times = &traj.times;
    if times.len() < 8 {
        return Err(CoreError::InvalidParameter(
            "velocity moment integrals need more strides".into(),
        ));
    }
    let vv_names = [
        ["vv_11", "vv_12", "vv_13"],
        ["vv_12", "vv_22", "vv_23"],
        ["vv_13", "vv_23", "vv_33"],
    ];
    let mut c_matrix = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            let s = traj.series(vv_names[k][l])?;
            // trapezoid of e^{3 tau / 2} vv
            let mut acc = 0.0;
            for t in 1..times.len() {
                let f0 = (1.5 * times[t - 1]).exp() * s[t - 1];
                let f1 = (1.5 * times[t]).exp() * s[t];
                acc += 0.5 * (f0 + f1) * (times[t] - times[t - 1]);
            }
            c_matrix[k][l] = acc;
        }
    }
    // tail: fit |v|_2 <= A e^{-sigma tau} on the last third of the run,
    // integrate e^{3 tau/2} A^2 e^{-2 sigma tau} analytically
    let vl2 = traj.series("v_l2")?;
    let t_end = *times.last().unwrap();
    let t_lo = t_end - (t_end - times[0]) / 3.0;
    let (sigma_fit, _) = fitting::log_slope(times, vl2, (t_lo, t_end))
        .unwrap_or((0.0, 0.0));
    let sigma = -sigma_fit;
    let a_end = vl2.last().copied().unwrap_or(0.0);
    let tail_abs = if 2.0 * sigma > 1.5 {
        a_end * a_end * (1.5 * t_end).exp() / (2.0 * sigma - 1.5)
    } else {
        f64::INFINITY
    };
    let c_scale = c_matrix
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let mut b_matrix0 = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            b_matrix0[k][l] = traj.series(&format!("bmat_{}{}", k + 1, l + 1))?[0];
        }
    }
    Ok(VelocityMomentIntegrals {
        c_matrix,
        b_matrix0,
        tail_bound: tail_abs / c_scale,
    })
}

pub fn asymptotic_coefficients(traj: &Trajectory) -> Result<AsymptoticCoefficients> {
    let beta0 = traj.moment_at(0, "beta");
    let gamma0 = traj.moment_at(0, "gamma");
    let zeta0 = traj.moment_at(0, "zeta");
    let ints = velocity_moment_integrals(traj)?;
    let cm = &ints.c_matrix;
    // d per the truncated time integrals: d_ii = zeta_ii(0) + (C33 - Cii)/2,
    // d_ij = zeta_ij(0) - Cij  (S order 11, 12, 13, 22, 23)
    let d = [
        zeta0[0] + 0.5 * (cm[2][2] - cm[0][0]),
        zeta0[1] - cm[0][1],
        zeta0[2] - cm[0][2],
        zeta0[3] + 0.5 * (cm[2][2] - cm[1][1]),
        zeta0[4] - cm[1][2],
    ];
    let g = &gamma0;
    let b_matrix = [
        [0.0, g[2], -g[1]],
        [-g[2], 0.0, g[0]],
        [g[1], -g[0], 0.0],
    ];
    Ok(AsymptoticCoefficients {
        b: [beta0[0], beta0[1], beta0[2]],
        c: [gamma0[0], gamma0[1], gamma0[2]],
        d,
        b_matrix,
        b_matrix_direct: ints.b_matrix0,
        c_matrix: ints.c_matrix,
        tail_bound: ints.tail_bound,
    })
}

/// Residual time series against the order-1 or order-2 self-similar
/// approximation, reconstructed from the recorded pairings (no snapshots).
#[derive(Debug, Clone)]
pub struct ExpansionResidual {
    pub times: Vec<f64>,
    pub w_residual: Vec<f64>,
    pub v_residual: Vec<f64>,
    pub w_slope: f64,
    pub v_slope: f64,
}

pub fn expansion_residual(
    traj: &Trajectory,
    order: u32,
    m: WeightExponent,
    coeffs: &AsymptoticCoefficients,
    window: (f64, f64),
) -> Result<ExpansionResidual> {
    if !(order == 1 || order == 2) {
        return Err(CoreError::InvalidParameter(format!(
            "expansion order must be 1 or 2, got {order}"
        )));
    }
    let m_int = m.value();
    if (m_int - 4.0).abs() > 1e-12 && (m_int - 5.0).abs() > 1e-12 {
        return Err(CoreError::InvalidParameter(
            "expansion residuals are recorded for m = 4 and m = 5".into(),
        ));
    }
    let mtag = if (m_int - 4.0).abs() < 1e-12 { 4 } else { 5 };
    let times = traj.times.clone();
    let norm_key = Trajectory::norm_key_value(m_int);
    let norms = traj.series(&norm_key)?;

    // coefficient vector a_i(tau) over the 11 eigenfields
    let coeff_at = |tau: f64| -> [f64; 11] {
        let mut a = [0.0; 11];
        for i in 0..3 {
            a[i] = coeffs.b[i] * (-tau).exp();
        }
        if order >= 2 {
            for i in 0..3 {
                a[3 + i] = coeffs.c[i] * (-1.5 * tau).exp();
            }
            for i in 0..5 {
                a[6 + i] = coeffs.d[i] * (-1.5 * tau).exp();
            }
        }
        a
    };

    let gram_w = eigen_gram_weighted(traj.grid, m)?;
    let gram_v = velocity_gram(traj.grid);

    let mut w_res = Vec::with_capacity(times.len());
    let mut v_res = Vec::with_capacity(times.len());
    let vl2 = traj.series("v_l2")?;
    for (t_idx, &tau) in times.iter().enumerate() {
        let a = coeff_at(tau);
        // ||w - w_app||_m^2 = ||w||^2 - 2 a.P + a.G.a
        let mut cross = 0.0;
        let mut quad = 0.0;
        for i in 0..11 {
            if a[i] == 0.0 {
                continue;
            }
            let p = traj.series(&format!("wpair{mtag}_{}", EIGEN_NAMES[i]))?[t_idx];
            cross += a[i] * p;
            for j in 0..11 {
                quad += a[i] * a[j] * gram_w[i][j];
            }
        }
        let val = (norms[t_idx] * norms[t_idx] - 2.0 * cross + quad).max(0.0);
        w_res.push(val.sqrt());

        let mut vcross = 0.0;
        let mut vquad = 0.0;
        for i in 0..11 {
            if a[i] == 0.0 {
                continue;
            }
            let p = traj.series(&format!("vpair_{}", EIGEN_NAMES[i]))?[t_idx];
            vcross += a[i] * p;
            for j in 0..11 {
                vquad += a[i] * a[j] * gram_v[i][j];
            }
        }
        let val = (vl2[t_idx] * vl2[t_idx] - 2.0 * vcross + vquad).max(0.0);
        v_res.push(val.sqrt());
    }
    let (w_slope, _) = fitting::log_slope(&times, &w_res, window)?;
    let (v_slope, _) = fitting::log_slope(&times, &v_res, window)?;
    Ok(ExpansionResidual {
        times,
        w_residual: w_res,
        v_residual: v_res,
        w_slope,
        v_slope,
    })
}

/// rho^{2m}-weighted Gram matrix of the 11 eigenfields by quadrature.
fn eigen_gram_weighted(grid: Grid3, m: WeightExponent) -> Result<[[f64; 11]; 11]> {
    let n = grid.n();
    let two_m = 2.0 * m.value();
    let sums = threading::par_sum_index(n, 121, |iz, acc| {
        let z = grid.coord(iz);
        for iy in 0..n {
            let y = grid.coord(iy);
            for ix in 0..n {
                let x = grid.coord(ix);
                let rho = 1.0 + (x * x + y * y + z * z).sqrt();
                let wgt = field::rho_pow(rho, two_m);
                let vals: Vec<[f64; 3]> = (0..11)
                    .map(|i| basis::eval_basis(eigen_label(i), x, y, z))
                    .collect();
                for i in 0..11 {
                    for j in i..11 {
                        let dot = vals[i][0] * vals[j][0]
                            + vals[i][1] * vals[j][1]
                            + vals[i][2] * vals[j][2];
                        acc[i * 11 + j] += wgt * dot;
                    }
                }
            }
        }
    });
    let vol = grid.cell_volume();
    let mut out = [[0.0; 11]; 11];
    for i in 0..11 {
        for j in i..11 {
            out[i][j] = sums[i * 11 + j] * vol;
            out[j][i] = out[i][j];
        }
    }
    Ok(out)
}

/// L^2 Gram matrix of the 11 velocity profiles from their analytic Fourier
/// forms summed over the lattice (consistent with the recorded pairings).
fn velocity_gram(grid: Grid3) -> [[f64; 11]; 11] {
    let n = grid.n();
    let nh = grid.n_half();
    let sums = threading::par_sum_index(n, 121, |iz, acc| {
        let kz = grid.wavenumber(iz);
        for iy in 0..n {
            let ky = grid.wavenumber(iy);
            for ix in 0..nh {
                let kx = grid.wavenumber_half(ix);
                if kx == 0.0 && ky == 0.0 && kz == 0.0 {
                    continue;
                }
                let weight = if ix == 0 || ix == nh - 1 { 1.0 } else { 2.0 };
                let vals: Vec<([f64; 3], [f64; 3])> = (0..11)
                    .map(|i| basis::fourier_eigenfield(eigen_velocity_label(i), kx, ky, kz))
                    .collect();
                for i in 0..11 {
                    for j in i..11 {
                        let (re_i, im_i) = &vals[i];
                        let (re_j, im_j) = &vals[j];
                        let mut dot = 0.0;
                        for c in 0..3 {
                            dot += re_i[c] * re_j[c] + im_i[c] * im_j[c];
                        }
                        acc[i * 11 + j] += weight * dot;
                    }
                }
            }
        }
    });
    let vol = 8.0 * grid.half_width().powi(3);
    let mut out = [[0.0; 11]; 11];
    for i in 0..11 {
        for j in i..11 {
            out[i][j] = sums[i * 11 + j] / vol;
            out[j][i] = out[i][j];
        }
    }
    out
}

/// Least-squares slope of log(series) over the window; the public decay-rate
/// fit (values must be positive, at least 10 samples in the window).
pub fn fit_decay_rate(times: &[f64], series: &[f64], window: (f64, f64)) -> Result<(f64, f64)> {
    fitting::log_slope(times, series, window)
}

// ---------------------------------------------------------------------------
// Fujigaki-Miyakawa profile comparison
// ---------------------------------------------------------------------------

/// The self-similar heat kernel E_t(x) = t^{-3/2} G(x / sqrt t).
pub fn eval_e_t(x: f64, y: f64, z: f64, t: f64) -> f64 {
    let s = t.sqrt();
    t.powf(-1.5) * basis::eval_g(x / s, y / s, z / s)
}

/// The velocity profile field built from the velocity-moment matrices:
/// u_j(x) = - sum_k b_{kj} d_k E_t(x) - sum_{k,l} c_{kl} F_{l,jk}(x, t),
/// where F_{l,jk}(., 1) = d_k d_l d_j Phi + (d_l G) delta_{jk}.
///
/// Requires the first-order coefficients b_i to vanish (the rapid-decay
/// regime in which the comparison profiles are defined).
pub fn fm_profiles(
    coeffs: &AsymptoticCoefficients,
    t: f64,
    grid: Grid3,
    b_tol: f64,
) -> Result<VectorFieldR> {
    if !(t > 0.0) {
        return Err(CoreError::InvalidParameter("time must be positive".into()));
    }
    let bmax = coeffs.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bmax > b_tol {
        return Err(CoreError::InvalidParameter(format!(
            "profile comparison requires vanishing first-order coefficients; |b| = {bmax:.3e}"
        )));
    }
    let b = coeffs.b_matrix;
    let c = coeffs.c_matrix;
    Ok(VectorFieldR::sample(grid, move |x, y, z| {
        let s = t.sqrt();
        let xi = [x / s, y / s, z / s];
        let dg = basis::grad_g_pub(xi[0], xi[1], xi[2]);
        let pref = t.powi(-2);
        std::array::from_fn(|j| {
            let mut acc = 0.0;
            for k in 0..3 {
                // d_k E_t(x) = t^{-2} (d_k G)(xi)
                acc -= b[k][j] * pref * dg[k];
            }
            for k in 0..3 {
                for l in 0..3 {
                    // F_{l,jk}(x,t) = t^{-2} [d_k d_l d_j Phi + (d_l G) dlt_{jk}](xi)
                    let mut f = basis::phi_third_pub(k, l, j, xi);
                    if j == k {
                        f += dg[l];
                    }
                    acc -= c[k][l] * pref * f;
                }
            }
            acc
        })
    }))
}

/// Closed-form u_app(., t-1) in the same regime, from the eigen velocity
/// profiles with c_i and d_ij derived from the moment matrices.
pub fn u_app_from_moment_matrices(
    b_matrix: &[[f64; 3]; 3],
    c_matrix: &[[f64; 3]; 3],
    t: f64,
    grid: Grid3,
) -> VectorFieldR {
    let c_i = [b_matrix[1][2], b_matrix[2][0], b_matrix[0][1]];
    let d = [
        0.5 * (c_matrix[2][2] - c_matrix[0][0]),
        -c_matrix[0][1],
        -c_matrix[0][2],
        0.5 * (c_matrix[2][2] - c_matrix[1][1]),
        -c_matrix[1][2],
    ];
    VectorFieldR::sample(grid, move |x, y, z| {
        let s = t.sqrt();
        let (xs, ys, zs) = (x / s, y / s, z / s);
        let pref = t.powi(-2);
        let mut acc = [0.0; 3];
        for i in 0..3 {
            let f = basis::eval_basis(BasisLabel::new(Family::F, i).unwrap(), xs, ys, zs);
            for cidx in 0..3 {
                acc[cidx] += c_i[i] * pref * f[cidx];
            }
        }
        for i in 0..5 {
            let vh = basis::eval_basis(BasisLabel::new(Family::Vh, i).unwrap(), xs, ys, zs);
            for cidx in 0..3 {
                acc[cidx] += d[i] * pref * vh[cidx];
            }
        }
        acc
    })
}

// ---------------------------------------------------------------------------
// weighted Biot-Savart estimate sampler
// ---------------------------------------------------------------------------

/// Report from the box-doubling boundedness proxy for the weighted estimate
/// |rho^m v|_6 <= C |rho^m w|_2.
#[derive(Debug, Clone)]
pub struct WeightedBsReport {
    pub regime: u32,
    pub m: f64,
    pub samples: usize,
    pub max_ratio_small: f64,
    pub max_ratio_double: f64,
    /// largest relative change of the per-sample ratio under box doubling
    pub max_rel_change: f64,
}

/// Which moment cancellations a regime requires.
fn regime_interval(regime: u32) -> Result<(f64, f64)> {
    Ok(match regime {
        1 => (0.0, 1.5),
        2 => (1.5, 2.5),
        3 => (2.5, 3.5),
        4 => (3.5, 4.5),
        _ => {
            return Err(CoreError::InvalidParameter(format!(
                "regime must be 1..=4, got {regime}"
            )))
        }
    })
}

/// Sample the ratio |rho^m v|_6 / |rho^m w|_2 for `count` random solenoidal
/// Gaussian-windowed fields satisfying the regime's moment cancellations, on
/// the base box and on its doubling (same grid spacing). With
/// `cancel = false` the regime's cancellations are skipped: the negative
/// control that demonstrates growth under box doubling.
pub fn weighted_bs_sampler(
    m: WeightExponent,
    regime: u32,
    count: usize,
    seed: u64,
    base_n: usize,
    base_l: f64,
    cancel: bool,
) -> Result<WeightedBsReport> {
    let (lo, hi) = regime_interval(regime)?;
    if !(m.value() > lo && m.value() < hi) && !(regime == 1 && m.value() < hi) {
        return Err(CoreError::InvalidParameter(format!(
            "weight m = {} outside the open interval ({lo}, {hi}) of regime {regime}",
            m.value()
        )));
    }
    let small = Grid3::new(base_n, base_l)?;
    let big = Grid3::new(2 * base_n, 2.0 * base_l)?;
    let sigma = base_l / 5.0;

    let mut max_small = 0.0f64;
    let mut max_big = 0.0f64;
    let mut max_change = 0.0f64;
    for s in 0..count {
        let sample = windowed_trig_sample(small, seed.wrapping_add(s as u64), sigma);
        let mut w_small = sample.build(small, sigma);
        let mut w_big = sample.build(big, sigma);
        // deterministic slow-moment admixture: makes a skipped cancellation
        // observable for every draw (the cancelled branch removes it again)
        let norm0 = field::lp_norm(&w_small, 2.0)?;
        for (lab, amp) in [("f1", 2.0 * norm0), ("h12", 2.0 * norm0)] {
            let label = BasisLabel::parse(lab)?;
            let fs = basis::sample(label, small);
            let fb = basis::sample(label, big);
            w_small.axpy(amp, &fs);
            w_big.axpy(amp, &fb);
        }
        if cancel && regime >= 3 {
            let ms = moments(&w_small);
            subtract_eigenfields(&mut w_small, &ms, regime);
            subtract_eigenfields(&mut w_big, &ms, regime);
        }
        let r_small = bs_ratio(&w_small, m)?;
        let r_big = bs_ratio(&w_big, m)?;
        max_small = max_small.max(r_small);
        max_big = max_big.max(r_big);
        max_change = max_change.max((r_big - r_small).abs() / r_small.max(1e-300));
    }
    Ok(WeightedBsReport {
        regime,
        m: m.value(),
        samples: count,
        max_ratio_small: max_small,
        max_ratio_double: max_big,
        max_rel_change: max_change,
    })
}

fn bs_ratio(w: &VectorFieldR, m: WeightExponent) -> Result<f64> {
    let v = biot_savart::velocity_from_vorticity(w);
    let num = field::weighted_lp_norm(&v, m, 6.0)?;
    let den = field::weighted_lp_norm(w, m, 2.0)?;
    Ok(num / den.max(1e-300))
}

fn subtract_eigenfields(w: &mut VectorFieldR, ms: &MomentSet, regime: u32) {
    let grid = w.grid;
    let beta = ms.beta;
    let zeta = ms.zeta;
    let zero_zeta = regime >= 4;
    let correction = VectorFieldR::sample(grid, move |x, y, z| {
        let mut acc = [0.0; 3];
        for i in 0..3 {
            let f = basis::eval_basis(BasisLabel::new(Family::F, i).unwrap(), x, y, z);
            for c in 0..3 {
                acc[c] += beta[i] * f[c];
            }
        }
        if zero_zeta {
            for i in 0..5 {
                let h = basis::eval_basis(BasisLabel::new(Family::H, i).unwrap(), x, y, z);
                for c in 0..3 {
                    acc[c] += zeta[i] * h[c];
                }
            }
        }
        acc
    });
    w.axpy(-1.0, &correction);
}

/// A divergence-free field defined on all of R^3: w = W curl P + grad W x P
/// with P a trigonometric polynomial of the base box and W a Gaussian
/// window. Exactly evaluable on the doubled box by periodic tiling of P.
struct WindowedTrigSample {
    base: Grid3,
    p: VectorFieldR,
    curl_p: VectorFieldR,
}

fn windowed_trig_sample(base: Grid3, seed: u64, _sigma: f64) -> WindowedTrigSample {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut p = VectorFieldR::zeros(base);
    for c in 0..3 {
        for v in p.comps[c].iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut spec = p.to_spectral();
    let kc = 3.0 * std::f64::consts::PI / base.half_width();
    crate::operators::apply_symbol(&mut spec, |k2| (-k2 / (kc * kc)).exp());
    let p = spec.to_physical();
    let curl_p = biot_savart::curl_spectral(&spec).to_physical();
    WindowedTrigSample {
        base,
        p,
        curl_p,
    }
}

impl WindowedTrigSample {
    /// Sample w = W curl P + grad W x P on `grid` (the base box or its
    /// doubling with the same spacing).
    fn build(&self, grid: Grid3, sigma: f64) -> VectorFieldR {
        let base = self.base;
        let nb = base.n();
        let n = grid.n();
        let s2 = sigma * sigma;
        let mut out = VectorFieldR::zeros(grid);
        // index of a big-grid point inside the periodically tiled base grid
        let first_base = |j: usize| -> usize {
            // physical coordinate of big point j, mapped into the base box
            let xc = grid.coord(j);
            let l = base.half_width();
            let wrapped = (xc + l).rem_euclid(2.0 * l) - l;
            ((wrapped + l) / base.spacing()).round() as usize % nb
        };
        let maps: Vec<usize> = (0..n).map(first_base).collect();
        let (c0, rest) = out.comps.split_at_mut(1);
        let (c1, c2) = rest.split_at_mut(1);
        let plane = n * n;
        threading::pool().install(|| {
            use rayon::prelude::*;
            c0[0]
                .par_chunks_mut(plane)
                .zip(c1[0].par_chunks_mut(plane))
                .zip(c2[0].par_chunks_mut(plane))
                .enumerate()
                .for_each(|(iz, ((p0, p1), p2))| {
                    let z = grid.coord(iz);
                    let bz = maps[iz];
                    for iy in 0..n {
                        let y = grid.coord(iy);
                        let by = maps[iy];
                        for ix in 0..n {
                            let x = grid.coord(ix);
                            let bx = maps[ix];
                            let bi = base.idx(bz, by, bx);
                            let r2 = x * x + y * y + z * z;
                            let w = (-r2 / (2.0 * s2)).exp();
                            let gw = [-x / s2 * w, -y / s2 * w, -z / s2 * w];
                            let pv = [
                                self.p.comps[0][bi],
                                self.p.comps[1][bi],
                                self.p.comps[2][bi],
                            ];
                            let cp = [
                                self.curl_p.comps[0][bi],
                                self.curl_p.comps[1][bi],
                                self.curl_p.comps[2][bi],
                            ];
                            p0[iy * n + ix] = w * cp[0] + gw[1] * pv[2] - gw[2] * pv[1];
                            p1[iy * n + ix] = w * cp[1] + gw[2] * pv[0] - gw[0] * pv[2];
                            p2[iy * n + ix] = w * cp[2] + gw[0] * pv[1] - gw[1] * pv[0];
                        }
                    }
                });
        });
        out
    }
}

// ---------------------------------------------------------------------------
// CSV helpers for trajectory series
// ---------------------------------------------------------------------------

/// Column-oriented CSV of selected series (17 significant digits).
pub fn series_to_csv(traj: &Trajectory, keys: &[&str]) -> Result<String> {
    let mut out = String::from("tau");
    for k in keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    let cols: Vec<&[f64]> = keys
        .iter()
        .map(|k| traj.series(k))
        .collect::<Result<Vec<_>>>()?;
    for (i, t) in traj.times.iter().enumerate() {
        out.push_str(&format!("{t:.16e}"));
        for col in &cols {
            out.push_str(&format!(",{:.16e}", col[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// All recorded series, in key order.
pub fn full_series_csv(traj: &Trajectory) -> String {
    let keys: Vec<&str> = traj.series_keys();
    let mut out = String::from("tau");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    let map: BTreeMap<&str, &[f64]> = keys
        .iter()
        .map(|k| (*k, traj.series(k).unwrap()))
        .collect();
    for (i, t) in traj.times.iter().enumerate() {
        out.push_str(&format!("{t:.16e}"));
        for k in &keys {
            out.push_str(&format!(",{:.16e}", map[k][i]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisLabel;
    use crate::field::ScalarFieldR;

    fn grid() -> Grid3 {
        Grid3::new(48, 12.0).unwrap()
    }

    #[test]
    fn moments_of_eigenfields_reproduce_gram_identities() {
        let g = grid();
        let h12 = basis::sample(BasisLabel::parse("h12").unwrap(), g);
        let ms = moments(&h12);
        let want_zeta = [0.0, 1.0, 0.0, 0.0, 0.0];
        for (got, want) in ms.zeta.iter().zip(&want_zeta) {
            assert!((got - want).abs() < 1e-10, "zeta {got} vs {want}");
        }
        for b in ms.beta {
            assert!(b.abs() < 1e-10);
        }
        for gm in ms.gamma {
            assert!(gm.abs() < 1e-10);
        }

        let f2 = basis::sample(BasisLabel::parse("f2").unwrap(), g);
        let ms = moments(&f2);
        assert!((ms.beta[1] - 1.0).abs() < 1e-10);
        assert!(ms.beta[0].abs() < 1e-12 && ms.beta[2].abs() < 1e-12);
        for gm in ms.gamma.iter().chain(ms.zeta.iter()) {
            assert!(gm.abs() < 1e-10);
        }

        let zero = VectorFieldR::zeros(g);
        let ms = moments(&zero);
        assert!(ms.beta.iter().all(|v| *v == 0.0));
        assert!(ms.m_tensor.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn moments_linear() {
        let g = Grid3::new(24, 8.0).unwrap();
        let a = crate::rand_fields::random_solenoidal(g, 3, 2.0);
        let b = crate::rand_fields::random_solenoidal(g, 4, 2.0);
        let mut combo = a.clone();
        combo.scale(2.0);
        combo.axpy(1.0, &b);
        let ma = moments(&a);
        let mb = moments(&b);
        let mc = moments(&combo);
        for i in 0..3 {
            assert!((mc.beta[i] - (2.0 * ma.beta[i] + mb.beta[i])).abs() < 1e-12);
            assert!((mc.gamma[i] - (2.0 * ma.gamma[i] + mb.gamma[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn m_tensor_symmetric_by_construction() {
        let g = Grid3::new(24, 8.0).unwrap();
        let w = crate::rand_fields::random_solenoidal(g, 5, 2.0);
        let ms = moments(&w);
        // stored symmetric in (j,k): single slot per unordered pair
        assert_eq!(ms.m_tensor[0].len(), 6);
    }

    #[test]
    fn identities_on_f1_and_negative_control() {
        let g = grid();
        let f1 = basis::sample(BasisLabel::parse("f1").unwrap(), g);
        let rep = check_moment_identities(&f1);
        assert!(rep.relative_max() < 1e-8, "rel {}", rep.relative_max());
        // antisymmetric part survives: int xi_2 w_3 = 1 = -int xi_3 w_2
        let mm = monomial_moments(&f1);
        assert!((mm.per_comp[2][2] - 1.0).abs() < 1e-9); // int xi_2 w_3
        assert!((mm.per_comp[1][3] + 1.0).abs() < 1e-9); // int xi_3 w_2

        // random solenoidal passes
        let w = crate::rand_fields::random_solenoidal(
            Grid3::new(64, 12.0).unwrap(),
            8,
            1.5,
        );
        let rep = check_moment_identities(&w);
        assert!(rep.relative_max() < 1e-8, "rel {}", rep.relative_max());

        // non-solenoidal violates
        let bad = VectorFieldR::sample(g, |x, y, z| {
            let e = (-(x * x + y * y + z * z) / 4.0).exp();
            [x * e, 0.0, 0.0]
        });
        let rep = check_moment_identities(&bad);
        assert!(rep.relative_max() > 1e-3, "rel {}", rep.relative_max());
    }

    #[test]
    fn fit_decay_rate_contract() {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.025).collect();
        let vals: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        let (s, se) = fit_decay_rate(&times, &vals, (0.0, 5.0)).unwrap();
        assert!((s + 1.0).abs() < 1e-12 && se < 1e-12);
        let bad = vec![-1.0; 200];
        assert!(fit_decay_rate(&times, &bad, (0.0, 5.0)).is_err());
    }

    #[test]
    fn fm_profile_identity() {
        // synthetic skew b and symmetric c matrices; compare the two closed
        // forms of the approximate velocity at t = 2
        let g = Grid3::new(32, 8.0).unwrap();
        let b_matrix = [
            [0.0, 0.3, -0.1],
            [-0.3, 0.0, 0.7],
            [0.1, -0.7, 0.0],
        ];
        let c_matrix = [
            [0.5, 0.1, -0.2],
            [0.1, 0.9, 0.05],
            [-0.2, 0.05, 0.3],
        ];
        let coeffs = AsymptoticCoefficients {
            b: [0.0; 3],
            c: [b_matrix[1][2], b_matrix[2][0], b_matrix[0][1]],
            d: [0.0; 5],
            b_matrix,
            b_matrix_direct: b_matrix,
            c_matrix,
            tail_bound: 0.0,
        };
        let t = 2.0;
        let fm = fm_profiles(&coeffs, t, g, 1e-12).unwrap();
        let ua = u_app_from_moment_matrices(&b_matrix, &c_matrix, t, g);
        let mut err = 0.0f64;
        for c in 0..3 {
            for i in 0..g.len() {
                err = err.max((fm.comps[c][i] - ua.comps[c][i]).abs());
            }
        }
        assert!(err < 1e-8, "profile identity error {err}");

        // all-zero coefficients give the zero field
        let zero = AsymptoticCoefficients {
            b: [0.0; 3],
            c: [0.0; 3],
            d: [0.0; 5],
            b_matrix: [[0.0; 3]; 3],
            b_matrix_direct: [[0.0; 3]; 3],
            c_matrix: [[0.0; 3]; 3],
            tail_bound: 0.0,
        };
        let z = fm_profiles(&zero, 4.0, g, 1e-12).unwrap();
        assert_eq!(z.max_abs(), 0.0);

        // E_t normalization at t = 4 (heat width sqrt(4 t) = 4 needs a box
        // of half-width 16 for the tail to clear truncation)
        let g16 = Grid3::new(32, 16.0).unwrap();
        let et = ScalarFieldR::sample(g16, |x, y, z| eval_e_t(x, y, z, 4.0));
        let integral = field::quadrature(&et);
        assert!((integral - 1.0).abs() < 1e-6, "int E_t = {integral}");

        // regime precondition
        let mut badc = zero;
        badc.b = [0.1, 0.0, 0.0];
        assert!(fm_profiles(&badc, 2.0, g, 1e-6).is_err());
    }

    #[test]
    fn weighted_bs_regime1_stable() {
        let m = WeightExponent::new(1.0).unwrap();
        let rep = weighted_bs_sampler(m, 1, 4, 100, 32, 8.0, true).unwrap();
        assert!(
            rep.max_rel_change < 0.10,
            "regime 1 ratio drifted {:.3}",
            rep.max_rel_change
        );
    }

    #[test]
    fn weighted_bs_regime3_cancellation_matters() {
        // m at the upper end of the regime interval: there the box-doubling
        // growth of an uncancelled tail is strong at desk-scale boxes
        let m = WeightExponent::new(3.3).unwrap();
        let good = weighted_bs_sampler(m, 3, 4, 200, 32, 8.0, true).unwrap();
        let bad = weighted_bs_sampler(m, 3, 4, 200, 32, 8.0, false).unwrap();
        assert!(
            good.max_rel_change < 0.10,
            "cancelled drift {:.3}",
            good.max_rel_change
        );
        assert!(
            bad.max_rel_change > 0.25,
            "negative control drift only {:.3}",
            bad.max_rel_change
        );
    }

    #[test]
    fn weighted_bs_rejects_mismatched_regime() {
        let m = WeightExponent::new(3.0).unwrap();
        assert!(weighted_bs_sampler(m, 2, 1, 0, 16, 6.0, true).is_err());
    }
}
