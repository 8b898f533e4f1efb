//! Time integration of the rescaled vorticity equation
//!     d_tau w = Lambda w + rot(v x w),   v = BS(w),
//! and of the physical-variable vorticity equation
//!     d_t omega = Delta omega + rot(u x omega),
//! plus the change of variables connecting them.
//!
//! The drift term (xi.grad)/2 inside Lambda is never finite-differenced: the
//! linear flow is applied exactly as heat plus dilation (Strang splitting
//! between the full linear semigroup and the nonlinearity). Between
//! diagnostic strides the dilations are accumulated analytically instead of
//! resampling every step: with w(xi) = amp * W(lambda xi) the linear flow is
//! a heat multiplier on W (time lambda^2 (e^sigma - 1)) plus the bookkeeping
//! lambda *= e^{sigma/2}, amp *= e^sigma, and the nonlinear substep becomes
//! d_tau W = amp * rot(BS(W) x W) on the reference lattice (the Biot-Savart
//! scaling cancels the curl scaling exactly). At every stride boundary the
//! state is resampled back to lambda = 1 by band-limited interpolation, so
//! emitted fields always live on the reference grid. In exact arithmetic
//! this is the same operator sequence as resampling inside every step.

use std::collections::BTreeMap;

use crate::biot_savart;
use crate::diagnostics::StrideProbe;
use crate::error::{CoreError, Result};
use crate::field::{VectorFieldK, VectorFieldR, WeightExponent, C64};
use crate::grid::Grid3;
use crate::semigroup;
use crate::{basis, fft, field, threading};

/// Time-stepping scheme for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Strang splitting with the exact linear semigroup (rescaled equation).
    StrangExactLinear,
    /// Integrating-factor Heun with the exact heat factor (physical
    /// variables).
    Imex,
}

/// Named initial data.
#[derive(Debug, Clone)]
pub enum InitialData {
    Zero,
    /// A single closed-form eigenfield, e.g. "f1", "g2", "h12".
    Eigenfield(String),
    /// Fixed mixture with all slow moments active plus a seeded smooth
    /// remainder bump (20% of the mixture norm).
    MixStandard { seed: u64 },
    /// The same mixture restricted to the second shell (beta = 0): the
    /// regime in which the second-order coefficients are cleanly defined.
    MixSecondShell { seed: u64 },
    /// Random smooth solenoidal field with all moments up to degree 2
    /// cancelled (a generic member of the doubly-projected subspace).
    RandomW2 { seed: u64 },
    /// Brandolese-symmetric vorticity.
    Symmetric { seed: u64 },
    /// Load a stored snapshot.
    Snapshot(std::path::PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid3,
    pub initial: InitialData,
    /// Step in tau (rescaled runs) or t (physical runs).
    pub dt: f64,
    pub t_end: f64,
    pub weight_m: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    /// Diagnostics cadence in steps.
    pub diagnostics_stride: usize,
    /// Store full snapshots every this many strides (None: only endpoints).
    pub snapshot_every_strides: Option<usize>,
    pub seed: u64,
    /// Normalize the initial datum to this weighted norm (None: leave as
    /// built).
    pub amplitude: Option<f64>,
    /// Admissible initial size; runs above it are rejected, and trajectories
    /// whose norm exceeds 10x this value abort.
    pub smallness_threshold: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.t_end < 0.0 {
            return Err(CoreError::InvalidParameter("t_end must be >= 0".into()));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "t_end/dt must be an integer, got {steps}"
            )));
        }
        if self.diagnostics_stride == 0 {
            return Err(CoreError::InvalidParameter(
                "diagnostics_stride must be positive".into(),
            ));
        }
        if !(self.weight_m >= 0.0) {
            return Err(CoreError::InvalidParameter("weight_m must be >= 0".into()));
        }
        if !(self.smallness_threshold > 0.0) {
            return Err(CoreError::InvalidParameter(
                "smallness_threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Aborted { reason: String },
}

/// Time-stamped diagnostic series and sparse snapshots of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid3,
    /// true for rescaled (tau) runs, false for physical (t) runs
    pub scaling_variables: bool,
    pub weight_m: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub snapshots: Vec<(f64, VectorFieldR)>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn series(&self, key: &str) -> Result<&[f64]> {
        self.series
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| CoreError::InvalidParameter(format!("no series named {key}")))
    }

    pub fn series_keys(&self) -> Vec<&str> {
        self.series.keys().map(|s| s.as_str()).collect()
    }

    /// Series key of the weighted norm for exponent m (recorded for
    /// m in {0, 2, 4, 5} and the run's own exponent).
    pub fn norm_key(m: WeightExponent) -> Result<String> {
        Ok(Self::norm_key_value(m.value()))
    }

    pub fn norm_key_value(m: f64) -> String {
        if (m - m.round()).abs() < 1e-12 {
            format!("norm_m{}", m.round() as i64)
        } else {
            format!("norm_m{m}")
        }
    }

    /// beta / gamma / zeta coefficient group at stride index.
    pub fn moment_at(&self, idx: usize, group: &str) -> Vec<f64> {
        let keys: Vec<String> = match group {
            "beta" => (1..=3).map(|i| format!("beta{i}")).collect(),
            "gamma" => (1..=3).map(|i| format!("gamma{i}")).collect(),
            "zeta" => ["11", "12", "13", "22", "23"]
                .iter()
                .map(|s| format!("zeta{s}"))
                .collect(),
            _ => panic!("unknown moment group {group}"),
        };
        keys.iter()
            .map(|k| self.series.get(k).map(|s| s[idx]).unwrap_or(0.0))
            .collect()
    }

    /// The run's initial weighted norm (its own exponent).
    pub fn initial_norm(&self) -> f64 {
        self.series(&Self::norm_key_value(self.weight_m))
            .map(|s| s[0])
            .unwrap_or(0.0)
    }

    fn push_record(&mut self, t: f64, rec: crate::diagnostics::StrideRecord) {
        self.times.push(t);
        for (k, v) in rec {
            self.series.entry(k).or_default().push(v);
        }
    }
}

/// Build (and normalize) the initial vorticity of a run.
pub fn build_initial(cfg: &RunConfig) -> Result<VectorFieldR> {
    let grid = cfg.grid;
    let mut w = match &cfg.initial {
        InitialData::Zero => VectorFieldR::zeros(grid),
        InitialData::Eigenfield(name) => basis::sample(basis::BasisLabel::parse(name)?, grid),
        InitialData::MixStandard { seed } => mixture(grid, *seed, true),
        InitialData::MixSecondShell { seed } => mixture(grid, *seed, false),
        InitialData::RandomW2 { seed } => random_w2(grid, *seed),
        InitialData::Symmetric { seed } => {
            crate::manifold::make_symmetric_field(*seed, grid).vorticity
        }
        InitialData::Snapshot(path) => crate::io::read_field(path)?,
    };
    if let Some(amp) = cfg.amplitude {
        let m = WeightExponent::new(cfg.weight_m)?;
        let norm = field::weighted_norm(&w, m);
        if norm > 0.0 {
            w.scale(amp / norm);
        }
    }
    // start from a dealiased, exactly mean-free state
    let mut spec = w.to_spectral();
    if cfg.dealias {
        spec.dealias();
    }
    for c in 0..3 {
        spec.comps[c][0] = C64::new(0.0, 0.0);
    }
    Ok(spec.to_physical())
}

/// Fixed mixture of eigenfields (all slow coefficients active when
/// `with_first_shell`), plus a 20% smooth second-shell-free bump.
fn mixture(grid: Grid3, seed: u64, with_first_shell: bool) -> VectorFieldR {
    let mut weights: Vec<(&str, f64)> = vec![
        ("g1", 0.8),
        ("g2", 0.5),
        ("g3", -0.7),
        ("h11", 0.6),
        ("h12", 0.5),
        ("h13", -0.4),
        ("h22", 0.3),
        ("h23", 0.45),
    ];
    if with_first_shell {
        weights.extend_from_slice(&[("f1", 1.0), ("f2", 0.6), ("f3", -0.4)]);
    }
    let mut w = VectorFieldR::zeros(grid);
    for (name, coef) in weights {
        let b = basis::sample(basis::BasisLabel::parse(name).unwrap(), grid);
        w.axpy(coef, &b);
    }
    let m0 = WeightExponent::new(0.0).unwrap();
    let base_norm = field::weighted_norm(&w, m0);
    let mut bump = random_w2(grid, seed);
    let bump_norm = field::weighted_norm(&bump, m0);
    if bump_norm > 0.0 {
        bump.scale(0.2 * base_norm / bump_norm);
    }
    w.axpy(1.0, &bump);
    if !with_first_shell {
        // the bump and rounding can reintroduce tiny beta; cancel exactly
        let ms = crate::diagnostics::moments(&w);
        for i in 0..3 {
            let f = basis::sample(basis::BasisLabel::new(basis::Family::F, i).unwrap(), grid);
            w.axpy(-ms.beta[i], &f);
        }
    }
    w
}

/// Random smooth solenoidal field with all moments of degree <= 2 cancelled
/// by subtracting its slow-eigenfield projection.
fn random_w2(grid: Grid3, seed: u64) -> VectorFieldR {
    let w = crate::rand_fields::random_solenoidal(grid, seed, grid.half_width() / 8.0);
    let m = WeightExponent::new(4.0).unwrap();
    match semigroup::spectral_split(&w, 2, m) {
        Ok(split) => split.remainder,
        Err(_) => w,
    }
}

// ---------------------------------------------------------------------------
// SV3 stepper (rescaled equation)
// ---------------------------------------------------------------------------

struct FieldBuffers {
    v: VectorFieldR,
    w: VectorFieldR,
    q: VectorFieldR,
    kscratch: Vec<C64>,
}

impl FieldBuffers {
    fn new(grid: Grid3) -> Self {
        Self {
            v: VectorFieldR::zeros(grid),
            w: VectorFieldR::zeros(grid),
            q: VectorFieldR::zeros(grid),
            kscratch: vec![C64::new(0.0, 0.0); grid.spectral_len()],
        }
    }
}

/// Stepper state for the rescaled equation with deferred dilation.
pub struct Sv3Stepper {
    grid: Grid3,
    eng: std::sync::Arc<fft::SpectralEngine>,
    /// spectral state W^ with w(xi) = amp * W(lambda xi)
    spec: VectorFieldK,
    stage: VectorFieldK,
    bufs: FieldBuffers,
    lambda: f64,
    amp: f64,
    dealias: bool,
    /// advective CFL monitor: dt * |v|_inf / h must stay below this
    pub cfl_limit: f64,
}

impl Sv3Stepper {
    pub fn new(w0: &VectorFieldR, dealias: bool) -> Self {
        let grid = w0.grid;
        Self {
            grid,
            eng: fft::engine(grid.n()),
            spec: w0.to_spectral(),
            stage: VectorFieldK::zeros(grid),
            bufs: FieldBuffers::new(grid),
            lambda: 1.0,
            amp: 1.0,
            dealias,
            cfl_limit: 0.5,
        }
    }

    /// Exact linear flow over sigma in the deferred frame.
    fn linear(&mut self, sigma: f64) {
        let t_heat = self.lambda * self.lambda * sigma.exp_m1();
        semigroup::heat_multiply(&mut self.spec, t_heat);
        self.lambda *= (0.5 * sigma).exp();
        self.amp *= sigma.exp();
    }

    /// d_tau W = amp * dealias(rot(BS(W) x W)); one RK2 (midpoint) step.
    /// The advective stability monitor rejects steps with dt |v|_inf / h
    /// above `cfl_limit`.
    fn nonlinear_substep(&mut self, h: f64) -> Result<()> {
        // stage = spec + (h/2) * amp * N(spec)
        let v_max = self.compute_vwq(true);
        let h_grid = self.grid.spacing();
        if h * v_max * self.amp / h_grid > self.cfl_limit {
            return Err(CoreError::NumericalAbort(format!(
                "nonlinear substep violates the advective stability bound: \
                 dt |v|_inf / h = {:.3e}",
                h * v_max * self.amp / h_grid
            )));
        }
        self.assemble(h / 2.0 * self.amp, true);
        // spec = spec + h * amp * N(stage)
        self.compute_vwq(false);
        self.assemble(h * self.amp, false);
        Ok(())
    }

    /// Fill bufs.v, bufs.w, bufs.q = v x w from spec (`first`) or stage;
    /// returns |v|_inf.
    fn compute_vwq(&mut self, first: bool) -> f64 {
        let Self {
            grid,
            eng,
            spec,
            stage,
            bufs,
            ..
        } = self;
        let src: &VectorFieldK = if first { spec } else { stage };
        for c in 0..3 {
            bs_component_into(src, c, &mut bufs.kscratch);
            eng.inverse(&mut bufs.kscratch, &mut bufs.v.comps[c]);
            bufs.kscratch.copy_from_slice(&src.comps[c]);
            eng.inverse(&mut bufs.kscratch, &mut bufs.w.comps[c]);
        }
        let v_max = if first { bufs.v.max_abs() } else { 0.0 };
        let n = grid.n();
        let plane = n * n;
        let v = &bufs.v;
        let w = &bufs.w;
        let (q0, rest) = bufs.q.comps.split_at_mut(1);
        let (q1, q2) = rest.split_at_mut(1);
        threading::pool().install(|| {
            use rayon::prelude::*;
            q0[0]
                .par_chunks_mut(plane)
                .zip(q1[0].par_chunks_mut(plane))
                .zip(q2[0].par_chunks_mut(plane))
                .enumerate()
                .for_each(|(iz, ((a, b), c))| {
                    let base = iz * plane;
                    for i in 0..plane {
                        let vi = [
                            v.comps[0][base + i],
                            v.comps[1][base + i],
                            v.comps[2][base + i],
                        ];
                        let wi = [
                            w.comps[0][base + i],
                            w.comps[1][base + i],
                            w.comps[2][base + i],
                        ];
                        a[i] = vi[1] * wi[2] - vi[2] * wi[1];
                        b[i] = vi[2] * wi[0] - vi[0] * wi[2];
                        c[i] = vi[0] * wi[1] - vi[1] * wi[0];
                    }
                });
        });
        v_max
    }

    /// fft(q) into stage, then target = spec + coef * dealias(i k x q^);
    /// writes the stage buffer and swaps it into the state for the second
    /// Runge-Kutta stage.
    fn assemble(&mut self, coef: f64, into_stage: bool) {
        let Self {
            grid,
            eng,
            spec,
            stage,
            bufs,
            dealias,
            ..
        } = self;
        for c in 0..3 {
            eng.forward(&bufs.q.comps[c], &mut stage.comps[c]);
        }
        let n = grid.n();
        let nh = grid.n_half();
        let plane_k = n * nh;
        let keep = grid.dealias_keep();
        let dealias = *dealias;
        let grid = *grid;
        let spec_ref: &VectorFieldK = spec;
        {
            let (s0, rest) = stage.comps.split_at_mut(1);
            let (s1, s2) = rest.split_at_mut(1);
            threading::pool().install(|| {
                use rayon::prelude::*;
                s0[0]
                    .par_chunks_mut(plane_k)
                    .zip(s1[0].par_chunks_mut(plane_k))
                    .zip(s2[0].par_chunks_mut(plane_k))
                    .enumerate()
                    .for_each(|(iz, ((p0, p1), p2))| {
                        let sz = grid.signed_index(iz);
                        let kz = if sz == -(n as i64) / 2 {
                            0.0
                        } else {
                            grid.wavenumber(iz)
                        };
                        for iy in 0..n {
                            let sy = grid.signed_index(iy);
                            let ky = if sy == -(n as i64) / 2 {
                                0.0
                            } else {
                                grid.wavenumber(iy)
                            };
                            for ix in 0..nh {
                                let kx = if ix == n / 2 {
                                    0.0
                                } else {
                                    grid.wavenumber_half(ix)
                                };
                                let idx = iy * nh + ix;
                                let gidx = iz * plane_k + idx;
                                let masked = dealias
                                    && (sz.abs() > keep || sy.abs() > keep || (ix as i64) > keep);
                                let q = [p0[idx], p1[idx], p2[idx]];
                                let i = C64::new(0.0, 1.0);
                                let curl = if masked {
                                    [C64::new(0.0, 0.0); 3]
                                } else {
                                    [
                                        i * (ky * q[2] - kz * q[1]),
                                        i * (kz * q[0] - kx * q[2]),
                                        i * (kx * q[1] - ky * q[0]),
                                    ]
                                };
                                p0[idx] = spec_ref.comps[0][gidx] + coef * curl[0];
                                p1[idx] = spec_ref.comps[1][gidx] + coef * curl[1];
                                p2[idx] = spec_ref.comps[2][gidx] + coef * curl[2];
                            }
                        }
                    });
            });
        }
        if !into_stage {
            std::mem::swap(spec, stage);
        }
    }

    /// One Strang step: half linear, nonlinear RK2, half linear.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        self.linear(dt / 2.0);
        self.nonlinear_substep(dt)?;
        self.linear(dt / 2.0);
        Ok(())
    }

    /// Resample back to the reference frame (lambda = 1, amp = 1), leaving a
    /// real-space copy of the state in the buffers.
    ///
    /// The dilated field is not exactly representable on the lattice; its
    /// best band-limited representative carries a spurious divergence at the
    /// level of the spectrum near the dealias edge. Since the continuum flow
    /// preserves div w = 0, the regridded state is projected back onto the
    /// discrete divergence-free subspace.
    pub fn regrid(&mut self) {
        if (self.lambda - 1.0).abs() < 1e-15 && (self.amp - 1.0).abs() < 1e-15 {
            for c in 0..3 {
                self.bufs.kscratch.copy_from_slice(&self.spec.comps[c]);
                self.eng
                    .inverse(&mut self.bufs.kscratch, &mut self.bufs.w.comps[c]);
            }
            return;
        }
        for c in 0..3 {
            self.eng.resample(
                &self.spec.comps[c],
                self.lambda,
                self.amp,
                &mut self.bufs.w.comps[c],
            );
            self.eng.forward(&self.bufs.w.comps[c], &mut self.spec.comps[c]);
        }
        // interpolation leakage above the retained band is pure noise: the
        // compressed spectrum of the dilated state lives inside it
        if self.dealias {
            self.spec.dealias();
        }
        self.spec = biot_savart::leray_project_spectral(&self.spec);
        for c in 0..3 {
            self.bufs.kscratch.copy_from_slice(&self.spec.comps[c]);
            self.eng
                .inverse(&mut self.bufs.kscratch, &mut self.bufs.w.comps[c]);
        }
        self.lambda = 1.0;
        self.amp = 1.0;
    }

    /// Current state as a real field (regrids first).
    pub fn state(&mut self) -> VectorFieldR {
        self.regrid();
        self.bufs.w.clone()
    }

    pub fn spectral_state(&mut self) -> &VectorFieldK {
        self.regrid();
        &self.spec
    }
}

/// One literal Strang step of the rescaled equation on a plain field:
/// half-step exact linear flow (heat + dilation), explicit RK2 nonlinear
/// substep (dealiased), half-step linear flow.
pub fn step_sv3(w: &VectorFieldR, dt: f64) -> Result<VectorFieldR> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidParameter("dt must be positive".into()));
    }
    let mut stepper = Sv3Stepper::new(w, true);
    stepper.linear(dt / 2.0);
    stepper.regrid();
    stepper.nonlinear_substep(dt)?;
    stepper.linear(dt / 2.0);
    stepper.regrid();
    Ok(stepper.bufs.w.clone())
}

/// The rotational-form nonlinear term rot(v x w), dealiased; equals
/// (w.grad) v - (v.grad) w for divergence-free fields.
pub fn nonlinear_term(w: &VectorFieldR) -> VectorFieldR {
    let spec = w.to_spectral();
    let v = biot_savart::velocity_spectral(&spec).to_physical();
    let grid = w.grid;
    let mut q = VectorFieldR::zeros(grid);
    for i in 0..grid.len() {
        let vi = [v.comps[0][i], v.comps[1][i], v.comps[2][i]];
        let wi = [w.comps[0][i], w.comps[1][i], w.comps[2][i]];
        q.comps[0][i] = vi[1] * wi[2] - vi[2] * wi[1];
        q.comps[1][i] = vi[2] * wi[0] - vi[0] * wi[2];
        q.comps[2][i] = vi[0] * wi[1] - vi[1] * wi[0];
    }
    let mut out = biot_savart::curl_spectral(&q.to_spectral());
    out.dealias();
    out.to_physical()
}

/// The advective form (w.grad) v - (v.grad) w, via spectral gradients;
/// retained for the equivalence test with the rotational form.
pub fn nonlinear_term_advective(w: &VectorFieldR) -> VectorFieldR {
    let grid = w.grid;
    let spec = w.to_spectral();
    let vspec = biot_savart::velocity_spectral(&spec);
    let v = vspec.to_physical();
    let wr = w;
    let mut out = VectorFieldR::zeros(grid);
    for c in 0..3 {
        let grad_v = crate::operators::gradient_scalar(grid, &vspec.comps[c]);
        let grad_w = crate::operators::gradient_scalar(grid, &spec.comps[c]);
        for i in 0..grid.len() {
            let mut acc = 0.0;
            for a in 0..3 {
                acc += wr.comps[a][i] * grad_v[a][i] - v.comps[a][i] * grad_w[a][i];
            }
            out.comps[c][i] = acc;
        }
    }
    let mut spec_out = out.to_spectral();
    spec_out.dealias();
    spec_out.to_physical()
}

/// Integrate the rescaled equation, recording diagnostics every stride.
pub fn run_sv3(cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.scheme != Scheme::StrangExactLinear {
        return Err(CoreError::InvalidParameter(
            "run_sv3 requires the strang_exact_linear scheme".into(),
        ));
    }
    let w0 = build_initial(cfg)?;
    let m = WeightExponent::new(cfg.weight_m)?;
    let norm0 = field::weighted_norm(&w0, m);
    if norm0 > cfg.smallness_threshold * (1.0 + 1e-9) {
        return Err(CoreError::InvalidParameter(format!(
            "initial datum too large: ||w0||_m = {norm0:.4e} > {}",
            cfg.smallness_threshold
        )));
    }
    let probe = StrideProbe::new(cfg.grid, cfg.weight_m);
    let mut traj = Trajectory {
        grid: cfg.grid,
        scaling_variables: true,
        weight_m: cfg.weight_m,
        dt: cfg.dt,
        times: Vec::new(),
        series: BTreeMap::new(),
        snapshots: Vec::new(),
        status: RunStatus::Completed,
    };
    let mut stepper = Sv3Stepper::new(&w0, cfg.dealias);

    record_stride(&probe, &mut stepper, &mut traj, 0.0);
    if cfg.snapshot_every_strides.is_some() {
        traj.snapshots.push((0.0, stepper.state()));
    }

    let steps = cfg.steps();
    let mut stride_counter = 0usize;
    for step in 0..steps {
        if let Err(e) = stepper.step(cfg.dt) {
            stepper.regrid();
            traj.snapshots
                .push(((step + 1) as f64 * cfg.dt, stepper.state()));
            traj.status = RunStatus::Aborted {
                reason: e.to_string(),
            };
            return Ok(traj);
        }
        if (step + 1) % cfg.diagnostics_stride == 0 {
            let tau = (step + 1) as f64 * cfg.dt;
            record_stride(&probe, &mut stepper, &mut traj, tau);
            stride_counter += 1;
            // blow-up detector
            let key = Trajectory::norm_key_value(cfg.weight_m);
            let cur = *traj.series[&key].last().unwrap();
            if cur > 10.0 * norm0.max(1e-300) {
                traj.snapshots.push((tau, stepper.state()));
                traj.status = RunStatus::Aborted {
                    reason: format!("norm grew tenfold: {cur:.3e} from {norm0:.3e}"),
                };
                return Ok(traj);
            }
            if let Some(every) = cfg.snapshot_every_strides {
                if stride_counter % every == 0 {
                    traj.snapshots.push((tau, stepper.state()));
                }
            }
        }
    }
    // final snapshot for callers that need the end state
    if cfg.snapshot_every_strides.is_some() && cfg.t_end > 0.0 {
        let t_final = cfg.t_end;
        if traj
            .snapshots
            .last()
            .map(|(t, _)| (*t - t_final).abs() > 1e-12)
            .unwrap_or(true)
        {
            traj.snapshots.push((t_final, stepper.state()));
        }
    }
    Ok(traj)
}

fn record_stride(probe: &StrideProbe, stepper: &mut Sv3Stepper, traj: &mut Trajectory, tau: f64) {
    stepper.regrid();
    let vspec = biot_savart::velocity_spectral(&stepper.spec);
    let vreal = vspec.to_physical();
    let rec = probe.measure(&stepper.spec, &stepper.bufs.w, &vspec, &vreal);
    traj.push_record(tau, rec);
}

// ---------------------------------------------------------------------------
// V3 stepper (physical variables)
// ---------------------------------------------------------------------------

/// Integrating-factor Heun stepper for the physical vorticity equation.
pub struct V3Stepper {
    grid: Grid3,
    eng: std::sync::Arc<fft::SpectralEngine>,
    spec: VectorFieldK,
    stage: VectorFieldK,
    k1: VectorFieldK,
    bufs: FieldBuffers,
    dealias: bool,
    pub time: f64,
}

impl V3Stepper {
    pub fn new(omega0: &VectorFieldR, dealias: bool) -> Self {
        let grid = omega0.grid;
        Self {
            grid,
            eng: fft::engine(grid.n()),
            spec: omega0.to_spectral(),
            stage: VectorFieldK::zeros(grid),
            k1: VectorFieldK::zeros(grid),
            bufs: FieldBuffers::new(grid),
            dealias,
            time: 0.0,
        }
    }

    fn rhs(&mut self, use_stage: bool, out_k1: bool) {
        let Self {
            grid,
            eng,
            spec,
            stage,
            bufs,
            ..
        } = self;
        let src: &VectorFieldK = if use_stage { stage } else { spec };
        for c in 0..3 {
            bs_component_into(src, c, &mut bufs.kscratch);
            eng.inverse(&mut bufs.kscratch, &mut bufs.v.comps[c]);
            bufs.kscratch.copy_from_slice(&src.comps[c]);
            eng.inverse(&mut bufs.kscratch, &mut bufs.w.comps[c]);
        }
        let grid = *grid;
        let n = grid.n();
        let plane = n * n;
        {
            let v = &bufs.v;
            let w = &bufs.w;
            let (q0, rest) = bufs.q.comps.split_at_mut(1);
            let (q1, q2) = rest.split_at_mut(1);
            threading::pool().install(|| {
                use rayon::prelude::*;
                q0[0]
                    .par_chunks_mut(plane)
                    .zip(q1[0].par_chunks_mut(plane))
                    .zip(q2[0].par_chunks_mut(plane))
                    .enumerate()
                    .for_each(|(iz, ((a, b), c))| {
                        let base = iz * plane;
                        for i in 0..plane {
                            let vi = [
                                v.comps[0][base + i],
                                v.comps[1][base + i],
                                v.comps[2][base + i],
                            ];
                            let wi = [
                                w.comps[0][base + i],
                                w.comps[1][base + i],
                                w.comps[2][base + i],
                            ];
                            a[i] = vi[1] * wi[2] - vi[2] * wi[1];
                            b[i] = vi[2] * wi[0] - vi[0] * wi[2];
                            c[i] = vi[0] * wi[1] - vi[1] * wi[0];
                        }
                    });
            });
        }
        let target = if out_k1 { &mut self.k1 } else { &mut self.stage };
        let eng = &self.eng;
        for c in 0..3 {
            eng.forward(&self.bufs.q.comps[c], &mut target.comps[c]);
        }
        // curl + dealias in place
        let keep = grid.dealias_keep();
        let dealias = self.dealias;
        let nh = grid.n_half();
        let plane_k = n * nh;
        let (t0, rest) = target.comps.split_at_mut(1);
        let (t1, t2) = rest.split_at_mut(1);
        threading::pool().install(|| {
            use rayon::prelude::*;
            t0[0]
                .par_chunks_mut(plane_k)
                .zip(t1[0].par_chunks_mut(plane_k))
                .zip(t2[0].par_chunks_mut(plane_k))
                .enumerate()
                .for_each(|(iz, ((p0, p1), p2))| {
                    let sz = grid.signed_index(iz);
                    let kz = if sz == -(n as i64) / 2 {
                        0.0
                    } else {
                        grid.wavenumber(iz)
                    };
                    for iy in 0..n {
                        let sy = grid.signed_index(iy);
                        let ky = if sy == -(n as i64) / 2 {
                            0.0
                        } else {
                            grid.wavenumber(iy)
                        };
                        for ix in 0..nh {
                            let kx = if ix == n / 2 {
                                0.0
                            } else {
                                grid.wavenumber_half(ix)
                            };
                            let idx = iy * nh + ix;
                            let masked = dealias
                                && (sz.abs() > keep || sy.abs() > keep || (ix as i64) > keep);
                            let q = [p0[idx], p1[idx], p2[idx]];
                            if masked {
                                p0[idx] = C64::new(0.0, 0.0);
                                p1[idx] = C64::new(0.0, 0.0);
                                p2[idx] = C64::new(0.0, 0.0);
                            } else {
                                let i = C64::new(0.0, 1.0);
                                p0[idx] = i * (ky * q[2] - kz * q[1]);
                                p1[idx] = i * (kz * q[0] - kx * q[2]);
                                p2[idx] = i * (kx * q[1] - ky * q[0]);
                            }
                        }
                    }
                });
        });
    }

    /// One integrating-factor Heun step of size h.
    pub fn step(&mut self, h: f64) -> Result<()> {
        if !(h > 0.0) {
            return Err(CoreError::InvalidParameter("step must be positive".into()));
        }
        // k1 = N(omega)
        self.rhs(false, true);
        // stage = E_h (omega + h k1) ; spec = E_h (omega + h/2 k1)
        for c in 0..3 {
            let spec = &mut self.spec.comps[c];
            let stage = &mut self.stage.comps[c];
            let k1 = &self.k1.comps[c];
            let plane = self.grid.n() * self.grid.n_half();
            threading::pool().install(|| {
                use rayon::prelude::*;
                spec.par_chunks_mut(plane)
                    .zip(stage.par_chunks_mut(plane))
                    .enumerate()
                    .for_each(|(iz, (sp, st))| {
                        let base = iz * plane;
                        for i in 0..plane {
                            let k = k1[base + i];
                            let w = sp[i];
                            st[i] = w + h * k;
                            sp[i] = w + 0.5 * h * k;
                        }
                    });
            });
        }
        semigroup::heat_multiply(&mut self.spec, h);
        semigroup::heat_multiply(&mut self.stage, h);
        // k2 = N(stage), written into stage; spec += h/2 k2
        self.rhs(true, false);
        let plane = self.grid.n() * self.grid.n_half();
        for c in 0..3 {
            let spec = &mut self.spec.comps[c];
            let k2 = &self.stage.comps[c];
            threading::pool().install(|| {
                use rayon::prelude::*;
                spec.par_chunks_mut(plane).enumerate().for_each(|(iz, sp)| {
                    let base = iz * plane;
                    for i in 0..plane {
                        sp[i] += 0.5 * h * k2[base + i];
                    }
                });
            });
        }
        self.time += h;
        Ok(())
    }

    /// Advance to an exact target time with uniform steps of at most `dt`
    /// (a shorter final step lands exactly on the target).
    pub fn advance_to(&mut self, target: f64, dt: f64) -> Result<()> {
        while self.time < target - 1e-13 {
            let h = dt.min(target - self.time);
            self.step(h)?;
        }
        Ok(())
    }

    pub fn state(&mut self) -> VectorFieldR {
        let mut out = VectorFieldR::zeros(self.grid);
        for c in 0..3 {
            self.bufs.kscratch.copy_from_slice(&self.spec.comps[c]);
            self.eng.inverse(&mut self.bufs.kscratch, &mut out.comps[c]);
        }
        out
    }
}

/// Integrate the physical-variable equation, recording a reduced series
/// (physical norms and velocity moment integrands).
pub fn run_v3(cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.scheme != Scheme::Imex {
        return Err(CoreError::InvalidParameter(
            "run_v3 requires the imex scheme".into(),
        ));
    }
    let w0 = build_initial(cfg)?;
    let mut traj = Trajectory {
        grid: cfg.grid,
        scaling_variables: false,
        weight_m: cfg.weight_m,
        dt: cfg.dt,
        times: Vec::new(),
        series: BTreeMap::new(),
        snapshots: Vec::new(),
        status: RunStatus::Completed,
    };
    let mut stepper = V3Stepper::new(&w0, cfg.dealias);
    record_v3(&mut stepper, &mut traj, 0.0);
    if cfg.snapshot_every_strides.is_some() {
        traj.snapshots.push((0.0, stepper.state()));
    }
    let steps = cfg.steps();
    let mut stride_counter = 0usize;
    for step in 0..steps {
        stepper.step(cfg.dt)?;
        if (step + 1) % cfg.diagnostics_stride == 0 {
            let t = (step + 1) as f64 * cfg.dt;
            record_v3(&mut stepper, &mut traj, t);
            stride_counter += 1;
            if let Some(every) = cfg.snapshot_every_strides {
                if stride_counter % every == 0 {
                    traj.snapshots.push((t, stepper.state()));
                }
            }
        }
    }
    Ok(traj)
}

fn record_v3(stepper: &mut V3Stepper, traj: &mut Trajectory, t: f64) {
    let omega = stepper.state();
    let u = biot_savart::velocity_spectral(&stepper.spec).to_physical();
    let grid = omega.grid;
    let vol = grid.cell_volume();
    let mut rec: crate::diagnostics::StrideRecord = Vec::new();
    rec.push((
        "norm_m0".into(),
        field::weighted_norm(&omega, WeightExponent::new(0.0).unwrap()),
    ));
    rec.push((
        "u_l2".into(),
        field::lp_norm(&u, 2.0).unwrap_or(0.0),
    ));
    // velocity moment integrand int u_k u_l dx
    let mut uu = [0.0f64; 6];
    let mut slot = 0;
    for k in 0..3 {
        for l in k..3 {
            let mut acc = 0.0;
            for i in 0..grid.len() {
                acc += u.comps[k][i] * u.comps[l][i];
            }
            uu[slot] = acc * vol;
            slot += 1;
        }
    }
    let names = ["11", "12", "13", "22", "23", "33"];
    for (s, nm) in names.iter().enumerate() {
        rec.push((format!("uu_{nm}"), uu[s]));
    }
    traj.push_record(t, rec);
}

// ---------------------------------------------------------------------------
// change of variables
// ---------------------------------------------------------------------------

/// Output of a change of variables with its truncation report.
pub struct ChangedField {
    pub field: VectorFieldR,
    pub boundary_fraction: f64,
    pub truncated: bool,
}

/// Physical vorticity at time t to scaling variables:
/// w(xi) = (1 + t) omega(xi sqrt(1+t)).
pub fn to_scaling_variables(omega: &VectorFieldR, t: f64) -> Result<ChangedField> {
    if t < 0.0 {
        return Err(CoreError::InvalidParameter("time must be >= 0".into()));
    }
    let a = (1.0 + t).sqrt();
    let bf = omega.boundary_fraction();
    let spec = omega.to_spectral();
    let eng = fft::engine(omega.grid.n());
    let mut out = VectorFieldR::zeros(omega.grid);
    for c in 0..3 {
        eng.resample(&spec.comps[c], a, 1.0 + t, &mut out.comps[c]);
    }
    Ok(ChangedField {
        field: out,
        boundary_fraction: bf,
        truncated: bf > semigroup::TRUNCATION_TOL,
    })
}

/// Scaling-variable vorticity at tau = log(1+t) back to physical variables:
/// omega(x) = w(x / sqrt(1+t)) / (1 + t).
pub fn from_scaling_variables(w: &VectorFieldR, t: f64) -> Result<ChangedField> {
    if t < 0.0 {
        return Err(CoreError::InvalidParameter("time must be >= 0".into()));
    }
    let a = 1.0 / (1.0 + t).sqrt();
    let spec = w.to_spectral();
    let eng = fft::engine(w.grid.n());
    let mut out = VectorFieldR::zeros(w.grid);
    for c in 0..3 {
        eng.resample(&spec.comps[c], a, 1.0 / (1.0 + t), &mut out.comps[c]);
    }
    Ok(ChangedField {
        field: out,
        boundary_fraction: 0.0,
        truncated: false,
    })
}

/// v x w helper used by `bs_component_into`.
#[inline]
fn bs_component_into(src: &VectorFieldK, c: usize, out: &mut [C64]) {
    let grid = src.grid;
    let n = grid.n();
    let nh = grid.n_half();
    let plane = n * nh;
    threading::par_chunks_mut(out, plane, |iz, chunk| {
        let kz = grid.wavenumber(iz);
        for iy in 0..n {
            let ky = grid.wavenumber(iy);
            for ix in 0..nh {
                let kx = grid.wavenumber_half(ix);
                let k2 = kx * kx + ky * ky + kz * kz;
                let idx = iy * nh + ix;
                let gidx = iz * plane + idx;
                if k2 == 0.0 {
                    chunk[idx] = C64::new(0.0, 0.0);
                    continue;
                }
                let ik = C64::new(0.0, 1.0 / k2);
                let w = [
                    src.comps[0][gidx],
                    src.comps[1][gidx],
                    src.comps[2][gidx],
                ];
                chunk[idx] = match c {
                    0 => ik * (ky * w[2] - kz * w[1]),
                    1 => ik * (kz * w[0] - kx * w[2]),
                    _ => ik * (kx * w[1] - ky * w[0]),
                };
            }
        }
    });
}
