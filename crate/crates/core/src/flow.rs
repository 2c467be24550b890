//! Hamilton flows: adaptive integration, reduced (free-flow-corrected) maps,
//! variational Jacobians, and a nontrapping probe.
//!
//! The integrator is an embedded Dormand–Prince 5(4) pair with PI step-size
//! control. The flows are smooth and non-stiff; adaptivity absorbs the
//! speed-up at large |ξ| where trajectories cross the perturbation in time
//! O(1/|ξ|). The free factor exp(−tH_{p₀}) of every reduced map is applied in
//! closed form so it contributes no integration error.

use crate::error::{Error, Result};
use crate::model::{HamiltonianSpec, PhasePoint, Which};

/// Max ODE state size: 2n phase variables + (2n)² variational entries, n = 2.
const MAXS: usize = 20;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

pub const TOL_MIN: f64 = 1e-12;
pub const TOL_MAX: f64 = 1e-4;

/// 2n×2n Jacobian of a phase-space map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseJacobian {
    n: usize,
    m: [[f64; 4]; 4],
}

impl PhaseJacobian {
    pub fn identity(n: usize) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..2 * n {
            m[i][i] = 1.0;
        }
        Self { n, m }
    }

    pub fn from_rows(n: usize, rows: &[Vec<f64>]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..2 * n {
            for j in 0..2 * n {
                m[i][j] = rows[i][j];
            }
        }
        Self { n, m }
    }

    /// Jacobian of the free flow exp(tH_{p₀}): [[I, tI], [0, I]].
    pub fn free_flow(n: usize, t: f64) -> Self {
        let mut j = Self::identity(n);
        for i in 0..n {
            j.m[i][n + i] = t;
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[i][j] = v;
    }

    pub fn matmul(&self, rhs: &PhaseJacobian) -> PhaseJacobian {
        let n2 = 2 * self.n;
        let mut out = PhaseJacobian { n: self.n, m: [[0.0; 4]; 4] };
        for i in 0..n2 {
            for j in 0..n2 {
                let mut s = 0.0;
                for k in 0..n2 {
                    s += self.m[i][k] * rhs.m[k][j];
                }
                out.m[i][j] = s;
            }
        }
        out
    }
}

/// Max-norm of JᵀΩJ − Ω with Ω the standard symplectic form.
pub fn symplectic_defect(j: &PhaseJacobian) -> f64 {
    let n = j.n;
    let n2 = 2 * n;
    // Ω acting on a column vector: Ω (x, ξ) = (ξ, −x)
    let omega = |i: usize, k: usize| -> f64 {
        if i < n && k == i + n {
            1.0
        } else if i >= n && k + n == i {
            -1.0
        } else {
            0.0
        }
    };
    let mut defect: f64 = 0.0;
    for r in 0..n2 {
        for c in 0..n2 {
            let mut s = 0.0;
            for i in 0..n2 {
                for k in 0..n2 {
                    s += j.m[i][r] * omega(i, k) * j.m[k][c];
                }
            }
            defect = defect.max((s - omega(r, c)).abs());
        }
    }
    defect
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// max |h(z(t)) − h(z(0))| over accepted steps
    pub energy_drift: f64,
    /// drift relative to max(1, |h(z(0))|)
    pub energy_drift_rel: f64,
    pub jacobian: Option<PhaseJacobian>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeStatus {
    Escaped,
    /// Never claims "trapped": trapping is a limit statement undecidable in
    /// finite time.
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct NontrappingVerdict {
    pub status: EscapeStatus,
    pub escape_time: Option<f64>,
    pub min_radius_after_escape: Option<f64>,
}

/// Which reduced map: w(t) uses the full Hamiltonian p, w₀(t) the kinetic k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducedMap {
    W,
    W0,
}

impl ReducedMap {
    pub fn which(self) -> Which {
        match self {
            ReducedMap::W => Which::P,
            ReducedMap::W0 => Which::K,
        }
    }
}

struct Ode<'a> {
    spec: &'a HamiltonianSpec,
    which: Which,
    variational: bool,
}

impl Ode<'_> {
    fn dim(&self) -> usize {
        let n2 = 2 * self.spec.dim();
        if self.variational {
            n2 + n2 * n2
        } else {
            n2
        }
    }

    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let n = self.spec.dim();
        let n2 = 2 * n;
        let z = PhasePoint::new(&y[..n], &y[n..n2]).expect("finite state");
        let f = self.spec.hamilton_vector_field(self.which, &z);
        out[..n2].copy_from_slice(&f[..n2]);
        if !self.variational {
            return;
        }
        let (hxx, hxxi, hxixi) = self.spec.hessian_blocks(self.which, &z);
        // δẋ_i = Σ_j (∂x_j ∂ξ_i h) δx_j + Σ_j (∂ξ_j ∂ξ_i h) δξ_j
        // δξ̇_i = −Σ_j (∂x_i ∂x_j h) δx_j − Σ_j (∂x_i ∂ξ_j h) δξ_j
        for col in 0..n2 {
            let base = n2 + col;
            let jx = |i: usize| y[n2 + i * n2 + col];
            let mut dxdot = [0.0; 2];
            let mut dkdot = [0.0; 2];
            for i in 0..n {
                let mut vx = 0.0;
                let mut vk = 0.0;
                for j in 0..n {
                    vx += hxxi[j][i] * jx(j) + hxixi[i][j] * jx(n + j);
                    vk -= hxx[i][j] * jx(j) + hxxi[i][j] * jx(n + j);
                }
                dxdot[i] = vx;
                dkdot[i] = vk;
            }
            for i in 0..n {
                out[base + i * n2] = dxdot[i];
                out[base + (n + i) * n2] = dkdot[i];
            }
        }
    }
}

struct StepperOutput {
    accepted: usize,
    rejected: usize,
}

/// Embedded Dormand–Prince 5(4) with PI control. Calls `on_accept(t, y)`
/// after every accepted step. Integrates from t0 to t1 in either direction.
fn dopri5(
    ode: &Ode,
    y: &mut [f64; MAXS],
    t0: f64,
    t1: f64,
    tol: f64,
    mut on_accept: impl FnMut(f64, &[f64]),
) -> Result<StepperOutput> {
    let m = ode.dim();
    let mut out = StepperOutput { accepted: 0, rejected: 0 };
    if t0 == t1 {
        return Ok(out);
    }
    // internal safety factor keeps the advertised tolerance an upper bound
    // for accumulated (energy) error, not just the per-step estimate
    let tol_int = (tol * 1e-2).max(1e-14);
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let h_floor = 1e-14 * t1.abs().max(span);

    let mut k = [[0.0f64; MAXS]; 7];
    let mut ytmp = [0.0f64; MAXS];
    let mut ynew = [0.0f64; MAXS];

    ode.rhs(&y[..m], &mut k[0][..m]);

    // initial step size: trial Euler step, second-derivative estimate
    let sc = |yv: &[f64], i: usize| tol_int * (1.0 + yv[i].abs());
    let rms = |v: &[f64], yref: &[f64]| -> f64 {
        let s: f64 = v.iter().enumerate().take(m).map(|(i, e)| (e / sc(yref, i)).powi(2)).sum();
        (s / m as f64).sqrt()
    };
    let d0 = {
        let s: f64 = (0..m).map(|i| (y[i] / sc(&y[..m], i)).powi(2)).sum();
        (s / m as f64).sqrt()
    };
    let d1 = rms(&k[0][..m], &y[..m]);
    let mut h = if d0 > 1e-5 && d1 > 1e-5 { 0.01 * d0 / d1 } else { 1e-6 };
    h = h.min(span);
    {
        for i in 0..m {
            ytmp[i] = y[i] + dir * h * k[0][i];
        }
        let mut f1 = [0.0f64; MAXS];
        ode.rhs(&ytmp[..m], &mut f1[..m]);
        let mut diff = [0.0f64; MAXS];
        for i in 0..m {
            diff[i] = f1[i] - k[0][i];
        }
        let d2 = rms(&diff[..m], &y[..m]) / h;
        let dm = d1.max(d2);
        let h1 = if dm > 1e-15 { (0.01 / dm).powf(0.2) } else { h * 100.0 };
        h = (100.0 * h).min(h1).min(span);
    }
    let mut t = t0;
    let mut err_old: f64 = 1.0;

    loop {
        if (t - t1) * dir >= 0.0 {
            return Ok(out);
        }
        if h < h_floor {
            return Err(Error::StepUnderflow { t, h, min: h_floor });
        }
        // land exactly on t1
        if (t + dir * h - t1) * dir > 0.0 {
            h = (t1 - t) * dir;
        }
        let hs = dir * h;

        macro_rules! stage {
            ($idx:expr, $coeffs:expr) => {{
                for i in 0..m {
                    let mut acc = 0.0;
                    for (j, &a) in $coeffs.iter().enumerate() {
                        acc += a * k[j][i];
                    }
                    ytmp[i] = y[i] + hs * acc;
                }
                let (head, tail) = k.split_at_mut($idx);
                let _ = head;
                ode.rhs(&ytmp[..m], &mut tail[0][..m]);
            }};
        }
        stage!(1, A2);
        stage!(2, A3);
        stage!(3, A4);
        stage!(4, A5);
        stage!(5, A6);
        // 5th-order solution (b-row doubles as the last a-row: FSAL)
        for i in 0..m {
            let mut acc = 0.0;
            for (j, &b) in B5.iter().enumerate() {
                acc += b * k[j][i];
            }
            ynew[i] = y[i] + hs * acc;
        }
        {
            let (head, tail) = k.split_at_mut(6);
            let _ = head;
            ode.rhs(&ynew[..m], &mut tail[0][..m]);
        }
        // embedded error estimate
        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..m {
            let mut e4 = 0.0;
            for (j, &b) in B4.iter().enumerate() {
                e4 += b * k[j][i];
            }
            let e = hs * e4 + y[i] - ynew[i];
            let scale = tol_int * (1.0 + y[i].abs().max(ynew[i].abs()));
            if !ynew[i].is_finite() {
                finite = false;
            }
            err_sq += (e / scale).powi(2);
        }
        let err = if finite { (err_sq / m as f64).sqrt() } else { 1e10 };

        if err <= 1.0 {
            t += hs;
            y[..m].copy_from_slice(&ynew[..m]);
            k[0] = k[6];
            out.accepted += 1;
            on_accept(t, &y[..m]);
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_old.max(1e-10).powf(0.4 / 5.0);
            h *= fac.clamp(0.2, 5.0);
            err_old = err;
        } else {
            out.rejected += 1;
            let fac = 0.9 * err.powf(-0.2);
            h *= fac.clamp(0.1, 0.9);
            if !finite && h < h_floor {
                return Err(Error::NonFinite(t));
            }
        }
        let _ = C;
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(TOL_MIN..=TOL_MAX).contains(&tol) {
        return Err(Error::InvalidInput(format!(
            "tolerance {tol:.3e} outside [{TOL_MIN:.0e}, {TOL_MAX:.0e}]"
        )));
    }
    Ok(())
}

fn pack_state(z0: &PhasePoint, variational: bool) -> ([f64; MAXS], usize) {
    let n = z0.dim();
    let n2 = 2 * n;
    let mut y = [0.0f64; MAXS];
    y[..n].copy_from_slice(z0.x());
    y[n..n2].copy_from_slice(z0.xi());
    let m = if variational {
        for i in 0..n2 {
            y[n2 + i * n2 + i] = 1.0;
        }
        n2 + n2 * n2
    } else {
        n2
    };
    (y, m)
}

fn unpack_point(n: usize, y: &[f64]) -> PhasePoint {
    PhasePoint::new(&y[..n], &y[n..2 * n]).expect("finite state")
}

fn unpack_jacobian(n: usize, y: &[f64]) -> PhaseJacobian {
    let n2 = 2 * n;
    let mut j = PhaseJacobian::identity(n);
    for r in 0..n2 {
        for c in 0..n2 {
            j.set(r, c, y[n2 + r * n2 + c]);
        }
    }
    j
}

/// Integrate exp(t H_h) from z0, recording every accepted step.
///
/// `which = P0` bypasses the integrator: the free flow is exact.
pub fn integrate(
    spec: &HamiltonianSpec,
    which: Which,
    z0: &PhasePoint,
    t_final: f64,
    tol: f64,
) -> Result<TrajectoryResult> {
    integrate_impl(spec, which, z0, t_final, tol, false)
}

/// As [`integrate`], also carrying the variational (linearized) equations;
/// the result's `jacobian` holds D exp(t H_h) at `t_final`.
pub fn integrate_with_jacobian(
    spec: &HamiltonianSpec,
    which: Which,
    z0: &PhasePoint,
    t_final: f64,
    tol: f64,
) -> Result<TrajectoryResult> {
    integrate_impl(spec, which, z0, t_final, tol, true)
}

fn integrate_impl(
    spec: &HamiltonianSpec,
    which: Which,
    z0: &PhasePoint,
    t_final: f64,
    tol: f64,
    variational: bool,
) -> Result<TrajectoryResult> {
    check_tol(tol)?;
    if !t_final.is_finite() {
        return Err(Error::InvalidInput("t_final must be finite".into()));
    }
    let n = spec.dim();
    if which == Which::P0 {
        let x1: Vec<f64> =
            z0.x().iter().zip(z0.xi()).map(|(x, k)| x + t_final * k).collect();
        let z1 = PhasePoint::new(&x1, z0.xi())?;
        return Ok(TrajectoryResult {
            times: vec![0.0, t_final],
            points: vec![*z0, z1],
            energy_drift: 0.0,
            energy_drift_rel: 0.0,
            jacobian: variational.then(|| PhaseJacobian::free_flow(n, t_final)),
            steps_accepted: 1,
            steps_rejected: 0,
        });
    }
    let ode = Ode { spec, which, variational };
    let (mut y, _m) = pack_state(z0, variational);
    let e0 = spec.eval_energy(which, z0);
    let mut times = vec![0.0];
    let mut points = vec![*z0];
    let mut drift: f64 = 0.0;
    let stats = dopri5(&ode, &mut y, 0.0, t_final, tol, |t, ys| {
        let z = unpack_point(n, ys);
        drift = drift.max((spec.eval_energy(which, &z) - e0).abs());
        times.push(t);
        points.push(z);
    })?;
    Ok(TrajectoryResult {
        times,
        points,
        energy_drift: drift,
        energy_drift_rel: drift / e0.abs().max(1.0),
        jacobian: variational.then(|| unpack_jacobian(n, &y)),
        steps_accepted: stats.accepted,
        steps_rejected: stats.rejected,
    })
}

/// Integrate through a monotone checkpoint list (all of one sign, increasing
/// in magnitude), returning the state (and Jacobian, if requested) at each
/// checkpoint. Segments continue from the previous endpoint, so a doubling
/// ladder costs one pass.
pub fn flow_checkpoints(
    spec: &HamiltonianSpec,
    which: Which,
    z0: &PhasePoint,
    checkpoints: &[f64],
    tol: f64,
    variational: bool,
) -> Result<Vec<(PhasePoint, Option<PhaseJacobian>)>> {
    check_tol(tol)?;
    let n = spec.dim();
    let mut outs = Vec::with_capacity(checkpoints.len());
    if which == Which::P0 {
        for &t in checkpoints {
            let x1: Vec<f64> = z0.x().iter().zip(z0.xi()).map(|(x, k)| x + t * k).collect();
            outs.push((
                PhasePoint::new(&x1, z0.xi())?,
                variational.then(|| PhaseJacobian::free_flow(n, t)),
            ));
        }
        return Ok(outs);
    }
    let ode = Ode { spec, which, variational };
    let (mut y, _m) = pack_state(z0, variational);
    let mut t_prev = 0.0f64;
    for &t in checkpoints {
        if t != 0.0 && t_prev != 0.0 && t.signum() != t_prev.signum() {
            return Err(Error::InvalidInput("checkpoints must not change sign".into()));
        }
        if t.abs() < t_prev.abs() {
            return Err(Error::InvalidInput("checkpoints must increase in magnitude".into()));
        }
        dopri5(&ode, &mut y, t_prev, t, tol, |_, _| {})?;
        t_prev = t;
        outs.push((unpack_point(n, &y), variational.then(|| unpack_jacobian(n, &y))));
    }
    Ok(outs)
}

/// Incremental flow state for ladder-style continuation: advances to
/// successive times (monotone in magnitude, fixed sign) without re-integrating
/// from zero.
pub struct FlowCursor<'a> {
    spec: &'a HamiltonianSpec,
    which: Which,
    y: [f64; MAXS],
    t: f64,
    tol: f64,
}

impl<'a> FlowCursor<'a> {
    pub fn new(spec: &'a HamiltonianSpec, which: Which, z0: &PhasePoint, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        let (y, _) = pack_state(z0, false);
        Ok(Self { spec, which, y, t: 0.0, tol })
    }

    pub fn advance_to(&mut self, t: f64) -> Result<PhasePoint> {
        let n = self.spec.dim();
        if self.which == Which::P0 {
            let mut x = [0.0; 2];
            for i in 0..n {
                x[i] = self.y[i] + t * self.y[n + i];
            }
            return PhasePoint::new(&x[..n], &self.y[n..2 * n]);
        }
        if t.abs() < self.t.abs() || (t != 0.0 && self.t != 0.0 && t.signum() != self.t.signum()) {
            return Err(Error::InvalidInput("cursor times must grow in one direction".into()));
        }
        let ode = Ode { spec: self.spec, which: self.which, variational: false };
        dopri5(&ode, &mut self.y, self.t, t, self.tol, |_, _| {})?;
        self.t = t;
        Ok(unpack_point(n, &self.y))
    }
}

/// Reduced flow w(t) = exp(−tH_{p₀}) ∘ exp(tH_p); the free part is closed-form.
pub fn reduced_flow_w(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    t: f64,
    tol: f64,
) -> Result<PhasePoint> {
    reduced_flow(spec, ReducedMap::W, z0, t, tol)
}

/// Reduced flow w₀(t) = exp(−tH_{p₀}) ∘ exp(tH_k).
pub fn reduced_flow_w0(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    t: f64,
    tol: f64,
) -> Result<PhasePoint> {
    reduced_flow(spec, ReducedMap::W0, z0, t, tol)
}

pub fn reduced_flow(
    spec: &HamiltonianSpec,
    map: ReducedMap,
    z0: &PhasePoint,
    t: f64,
    tol: f64,
) -> Result<PhasePoint> {
    let endpoint = flow_checkpoints(spec, map.which(), z0, &[t], tol, false)?;
    let (z, _) = endpoint[0];
    free_reduce(&z, t)
}

/// Apply exp(−tH_{p₀}) in closed form: (y, η) ↦ (y − tη, η).
pub fn free_reduce(z: &PhasePoint, t: f64) -> Result<PhasePoint> {
    let x: Vec<f64> = z.x().iter().zip(z.xi()).map(|(y, k)| y - t * k).collect();
    PhasePoint::new(&x, z.xi())
}

/// Inverse reduced flow, computed by the reversed composition
/// exp(−tH) ∘ exp(tH_{p₀}) — no root-finding.
pub fn inverse_reduced_flow(
    spec: &HamiltonianSpec,
    map: ReducedMap,
    z: &PhasePoint,
    t: f64,
    tol: f64,
) -> Result<PhasePoint> {
    let x: Vec<f64> = z.x().iter().zip(z.xi()).map(|(x, k)| x + t * k).collect();
    let shifted = PhasePoint::new(&x, z.xi())?;
    let endpoint = flow_checkpoints(spec, map.which().clone(), &shifted, &[-t], tol, false)?;
    Ok(endpoint[0].0)
}

/// Radius beyond which the metric perturbation has decayed to 1% (or the
/// window's outer radius when present); escape radii should be at least
/// twice this.
pub fn perturbation_radius_proxy(spec: &HamiltonianSpec) -> f64 {
    if let Some(w) = spec.window() {
        return w.r_zero;
    }
    match spec.metric_family() {
        crate::model::MetricFamily::Flat => 0.0,
        _ => 100f64.powf(1.0 / spec.mu()),
    }
}

/// Probe forward/backward nontrapping by integrating the kinetic flow.
///
/// Escaped means |y(t)| exceeded `r_esc` and both |y| and d|y|²/dt stayed
/// monotone for the remainder of the window; anything else is Undetermined.
pub fn nontrapping_probe(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    t_max: f64,
    r_esc: f64,
    tol: f64,
) -> Result<NontrappingVerdict> {
    if z0.xi_norm() < spec.xi_min() {
        return Err(Error::ZeroMomentum(z0.xi_norm(), spec.xi_min()));
    }
    let proxy = perturbation_radius_proxy(spec);
    if r_esc < 2.0 * proxy {
        return Err(Error::InvalidInput(format!(
            "escape radius {r_esc} below twice the perturbation radius proxy {proxy}"
        )));
    }
    if t_max <= 0.0 {
        return Err(Error::InvalidInput("t_max must be positive".into()));
    }
    let traj = integrate(spec, Which::K, z0, t_max, tol)?;
    let radius = |z: &PhasePoint| z.x().iter().map(|v| v * v).sum::<f64>().sqrt();
    let radial_speed = |z: &PhasePoint| {
        let f = spec.hamilton_vector_field(Which::K, z);
        let mut s = 0.0;
        for i in 0..z.dim() {
            s += 2.0 * z.x()[i] * f[i];
        }
        s
    };
    // first sample index from which |y| >= r_esc and the outward conditions
    // persist to the end of the window
    let m = traj.points.len();
    let mut escape_idx: Option<usize> = None;
    let mut ok_from = m; // first index such that conditions hold from there on
    for i in (0..m).rev() {
        let z = &traj.points[i];
        if radius(z) >= r_esc
            && radial_speed(z) > 0.0
            && (i + 1 >= m || radius(z) <= radius(&traj.points[i + 1]))
        {
            ok_from = i;
        } else {
            break;
        }
    }
    if ok_from < m {
        escape_idx = Some(ok_from);
    }
    match escape_idx {
        None => Ok(NontrappingVerdict {
            status: EscapeStatus::Undetermined,
            escape_time: None,
            min_radius_after_escape: None,
        }),
        Some(i) => {
            // refine the crossing time by linear interpolation in |y|
            let t_esc = if i == 0 {
                0.0
            } else {
                let (t0, t1) = (traj.times[i - 1], traj.times[i]);
                let (r0, r1) = (radius(&traj.points[i - 1]), radius(&traj.points[i]));
                if r1 > r0 + 1e-300 {
                    t0 + (t1 - t0) * ((r_esc - r0) / (r1 - r0)).clamp(0.0, 1.0)
                } else {
                    t1
                }
            };
            let min_r = traj.points[i..].iter().map(radius).fold(f64::INFINITY, f64::min);
            Ok(NontrappingVerdict {
                status: EscapeStatus::Escaped,
                escape_time: Some(t_esc),
                min_radius_after_escape: Some(min_r),
            })
        }
    }
}

/// D_z exp(tH_h)(z0) via the variational equations.
pub fn flow_jacobian(
    spec: &HamiltonianSpec,
    which: Which,
    z0: &PhasePoint,
    t: f64,
    tol: f64,
) -> Result<PhaseJacobian> {
    if which == Which::P0 {
        return Ok(PhaseJacobian::free_flow(spec.dim(), t));
    }
    let r = integrate_with_jacobian(spec, which, z0, t, tol)?;
    Ok(r.jacobian.expect("variational run returns jacobian"))
}

/// Jacobian of a reduced flow: closed-form free factor times the flow Jacobian.
pub fn reduced_flow_jacobian(
    spec: &HamiltonianSpec,
    map: ReducedMap,
    z0: &PhasePoint,
    t: f64,
    tol: f64,
) -> Result<PhaseJacobian> {
    let jk = flow_jacobian(spec, map.which(), z0, t, tol)?;
    Ok(PhaseJacobian::free_flow(spec.dim(), -t).matmul(&jk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Assumption, MetricFamily, PotentialFamily};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn bump(n: usize, c: f64, mu: f64) -> HamiltonianSpec {
        HamiltonianSpec::new(
            n,
            MetricFamily::IsotropicBump { c },
            PotentialFamily::Zero,
            mu,
            Assumption::B,
        )
        .unwrap()
    }

    #[test]
    fn free_flow_is_exact() {
        let spec = HamiltonianSpec::flat_free(2);
        let z0 = PhasePoint::new(&[0.5, -1.0], &[2.0, 1.0]).unwrap();
        let r = integrate(&spec, Which::P0, &z0, 3.0, 1e-10).unwrap();
        let end = r.points.last().unwrap();
        assert_eq!(end.x(), &[0.5 + 6.0, -1.0 + 3.0]);
        assert_eq!(end.xi(), z0.xi());
        assert_eq!(r.energy_drift, 0.0);
    }

    #[test]
    fn flat_kinetic_flow_matches_free_flow() {
        let spec = HamiltonianSpec::flat_free(1);
        let z0 = PhasePoint::new(&[0.3], &[1.7]).unwrap();
        let tol = 1e-10;
        let r = integrate(&spec, Which::K, &z0, 5.0, tol).unwrap();
        let end = r.points.last().unwrap();
        assert!((end.x()[0] - (0.3 + 5.0 * 1.7)).abs() < tol);
        assert!((end.xi()[0] - 1.7).abs() < tol);
    }

    #[test]
    fn self_convergence_of_adaptive_integration() {
        let spec = bump(1, 0.2, 2.0);
        let z0 = PhasePoint::new(&[0.0], &[1.0]).unwrap();
        let tol = 1e-8;
        let a = integrate(&spec, Which::K, &z0, 10.0, tol).unwrap();
        let b = integrate(&spec, Which::K, &z0, 10.0, tol / 16.0).unwrap();
        let d = a.points.last().unwrap().dist(b.points.last().unwrap());
        assert!(d < 10.0 * tol, "self-convergence distance {d}");
    }

    #[test]
    fn energy_conserved_within_tolerance() {
        let spec = bump(2, 0.3, 1.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let z0 = PhasePoint::new(
                &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                &[rng.gen_range(0.5..4.0), rng.gen_range(-1.0..1.0)],
            )
            .unwrap();
            for tol in [1e-8, 1e-10] {
                let r = integrate(&spec, Which::K, &z0, 10.0, tol).unwrap();
                assert!(
                    r.energy_drift_rel <= 100.0 * tol,
                    "drift {} at tol {tol}",
                    r.energy_drift_rel
                );
            }
        }
    }

    #[test]
    fn group_law_and_time_reversal() {
        let spec = bump(1, 0.25, 2.0);
        let tol = 1e-10;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let z0 =
                PhasePoint::new(&[rng.gen_range(-1.0..1.0)], &[rng.gen_range(0.5..3.0)]).unwrap();
            let (t1, t2) = (1.3, 2.1);
            let a = integrate(&spec, Which::K, &z0, t1 + t2, tol).unwrap();
            let b1 = integrate(&spec, Which::K, &z0, t1, tol).unwrap();
            let b2 =
                integrate(&spec, Which::K, b1.points.last().unwrap(), t2, tol).unwrap();
            let d = a.points.last().unwrap().dist(b2.points.last().unwrap());
            assert!(d < 20.0 * tol, "group law defect {d}");

            let fwd = integrate(&spec, Which::K, &z0, t1, tol).unwrap();
            let back =
                integrate(&spec, Which::K, fwd.points.last().unwrap(), -t1, tol).unwrap();
            let d = back.points.last().unwrap().dist(&z0);
            assert!(d < 20.0 * tol, "reversal defect {d}");
        }
    }

    #[test]
    fn reduced_flows_flat_identity_and_t0() {
        let spec = HamiltonianSpec::flat_free(2);
        let z0 = PhasePoint::new(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        let tol = 1e-10;
        let w = reduced_flow_w(&spec, &z0, 7.0, tol).unwrap();
        assert!(w.dist(&z0) < tol);
        let w0 = reduced_flow_w0(&spec, &z0, 0.0, tol).unwrap();
        assert_eq!(w0, z0);
    }

    #[test]
    fn reduced_w_equals_w0_without_potential() {
        let spec = bump(1, 0.3, 1.5);
        let z0 = PhasePoint::new(&[0.0], &[4.0]).unwrap();
        let tol = 1e-10;
        let a = reduced_flow_w(&spec, &z0, 5.0, tol).unwrap();
        let b = reduced_flow_w0(&spec, &z0, 5.0, tol).unwrap();
        assert!(a.dist(&b) < 20.0 * tol, "dist {}", a.dist(&b));
    }

    #[test]
    fn inverse_reduced_flow_round_trip() {
        let spec = bump(2, 0.3, 2.0);
        let tol = 1e-10;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let z0 = PhasePoint::new(
                &[rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)],
                &[rng.gen_range(0.3..3.0), rng.gen_range(-2.0..2.0)],
            )
            .unwrap();
            let t = rng.gen_range(0.5..6.0);
            let w = reduced_flow_w0(&spec, &z0, t, tol).unwrap();
            let back = inverse_reduced_flow(&spec, ReducedMap::W0, &w, t, tol).unwrap();
            assert!(back.dist(&z0) < 10.0 * tol, "round trip {}", back.dist(&z0));
        }
        // identity cases
        let z = PhasePoint::new(&[0.7, 0.1], &[1.0, 0.0]).unwrap();
        let flat = HamiltonianSpec::flat_free(2);
        let inv = inverse_reduced_flow(&flat, ReducedMap::W, &z, 3.0, tol).unwrap();
        assert!(inv.dist(&z) < tol);
        let inv0 = inverse_reduced_flow(&spec, ReducedMap::W0, &z, 0.0, tol).unwrap();
        assert_eq!(inv0, z);
    }

    #[test]
    fn nontrapping_flat_escape_time() {
        let spec = HamiltonianSpec::flat_free(1);
        let z0 = PhasePoint::new(&[1.0], &[2.0]).unwrap();
        let v = nontrapping_probe(&spec, &z0, 100.0, 10.0, 1e-8).unwrap();
        assert_eq!(v.status, EscapeStatus::Escaped);
        let expected = (10.0 - 1.0) / 2.0;
        let t = v.escape_time.unwrap();
        assert!((t - expected).abs() < 0.3, "escape time {t} vs {expected}");
        assert!(v.min_radius_after_escape.unwrap() >= 10.0 - 1e-6);
    }

    #[test]
    fn nontrapping_1d_bump_escapes_and_preserves_sign() {
        let spec = bump(1, 0.4, 1.5);
        for xi0 in [0.7, -1.3] {
            let z0 = PhasePoint::new(&[0.5], &[xi0]).unwrap();
            let v = nontrapping_probe(&spec, &z0, 200.0, 50.0, 1e-8).unwrap();
            assert_eq!(v.status, EscapeStatus::Escaped);
            // kinetic-energy conservation forbids the 1D momentum reaching 0
            let traj = integrate(&spec, Which::K, &z0, 30.0, 1e-8).unwrap();
            assert!(traj.points.iter().all(|z| z.xi()[0] * xi0 > 0.0));
        }
    }

    #[test]
    fn nontrapping_rejects_zero_momentum() {
        let spec = bump(1, 0.4, 1.5);
        let z0 = PhasePoint::new(&[0.5], &[0.0]).unwrap();
        assert!(matches!(
            nontrapping_probe(&spec, &z0, 10.0, 50.0, 1e-8),
            Err(Error::ZeroMomentum(..))
        ));
    }

    #[test]
    fn jacobian_free_flow_exact() {
        let spec = HamiltonianSpec::flat_free(2);
        let z0 = PhasePoint::new(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let j = flow_jacobian(&spec, Which::P0, &z0, 2.5, 1e-10).unwrap();
        assert_eq!(j, PhaseJacobian::free_flow(2, 2.5));
        assert_eq!(symplectic_defect(&j), 0.0);
    }

    #[test]
    fn jacobian_symplectic_defect_small() {
        let spec = bump(1, 0.3, 2.0);
        let z0 = PhasePoint::new(&[0.4], &[1.2]).unwrap();
        for t in [5.0, 20.0, -20.0] {
            let j = flow_jacobian(&spec, Which::K, &z0, t, 1e-10).unwrap();
            let d = symplectic_defect(&j);
            assert!(d < 1e-6, "defect {d} at t={t}");
        }
    }

    #[test]
    fn jacobian_matches_forward_differences() {
        let spec = bump(2, 0.3, 2.0);
        let z0 = PhasePoint::new(&[0.2, -0.4], &[1.0, 0.7]).unwrap();
        let t = 3.0;
        let tol = 1e-10;
        let j = flow_jacobian(&spec, Which::K, &z0, t, tol).unwrap();
        let h = 1e-5;
        let base = integrate(&spec, Which::K, &z0, t, tol).unwrap();
        let zb = base.points.last().unwrap();
        for col in 0..4 {
            let mut x = [0.2, -0.4];
            let mut xi = [1.0, 0.7];
            if col < 2 {
                x[col] += h;
            } else {
                xi[col - 2] += h;
            }
            let zp = PhasePoint::new(&x, &xi).unwrap();
            let pert = integrate(&spec, Which::K, &zp, t, tol).unwrap();
            let ze = pert.points.last().unwrap();
            for row in 0..4 {
                let fd = if row < 2 {
                    (ze.x()[row] - zb.x()[row]) / h
                } else {
                    (ze.xi()[row - 2] - zb.xi()[row - 2]) / h
                };
                assert!(
                    (j.get(row, col) - fd).abs() < 1e-4,
                    "entry ({row},{col}): {} vs fd {}",
                    j.get(row, col),
                    fd
                );
            }
        }
    }

    #[test]
    fn symplectic_defect_detects_non_symplectic() {
        let id = PhaseJacobian::identity(2);
        assert_eq!(symplectic_defect(&id), 0.0);
        assert_eq!(symplectic_defect(&PhaseJacobian::free_flow(2, 3.7)), 0.0);
        let mut bad = PhaseJacobian::identity(2);
        bad.set(0, 0, 1.3);
        assert!(symplectic_defect(&bad) > 0.0);
    }

    #[test]
    fn trajectory_starts_exactly_at_initial_condition() {
        let spec = bump(1, 0.2, 1.5);
        let z0 = PhasePoint::new(&[0.1], &[1.0]).unwrap();
        let r = integrate(&spec, Which::K, &z0, 4.0, 1e-8).unwrap();
        assert_eq!(r.times[0], 0.0);
        assert_eq!(r.points[0], z0);
        assert!(r.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tolerance_bounds_enforced() {
        let spec = HamiltonianSpec::flat_free(1);
        let z0 = PhasePoint::new(&[0.0], &[1.0]).unwrap();
        assert!(integrate(&spec, Which::K, &z0, 1.0, 1e-3).is_err());
        assert!(integrate(&spec, Which::K, &z0, 1.0, 1e-13).is_err());
    }

    proptest::proptest! {
        #[test]
        fn kinetic_reduced_maps_shift_positions_only(
            x0 in -2.0f64..2.0, xi0 in 0.5f64..3.0, t in 0.1f64..4.0
        ) {
            // momentum part of the reduced flow equals the flow momentum
            let spec = bump(1, 0.3, 2.0);
            let z0 = PhasePoint::new(&[x0], &[xi0]).unwrap();
            let traj = integrate(&spec, Which::K, &z0, t, 1e-8).unwrap();
            let end = traj.points.last().unwrap();
            let red = reduced_flow_w0(&spec, &z0, t, 1e-8).unwrap();
            proptest::prop_assert!((red.xi()[0] - end.xi()[0]).abs() < 1e-9);
            proptest::prop_assert!(
                (red.x()[0] - (end.x()[0] - t * end.xi()[0])).abs() < 1e-9
            );
        }
    }
}
