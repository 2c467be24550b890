//! Scattering data (z±, ξ±), the asymptotic maps w± and their inverses, and
//! decay-rate verification.
//!
//! Limits t → ±∞ are taken on a doubling time ladder with one Richardson
//! step: the position tail of the reduced flow is O(t^{1-μ}) and the momentum
//! tail O(t^{-μ}), so a single extrapolation with the known order is both
//! justified and cheap. Rate fits use least squares on the last half of the
//! ladder to stay in the asymptotic regime.

use crate::error::{Error, Result};
use crate::fit::{loglog_slope_last_half, LineFit};
use crate::flow::{
    flow_checkpoints, free_reduce, perturbation_radius_proxy, reduced_flow, reduced_flow_jacobian,
    symplectic_defect, FlowCursor, ReducedMap,
};
use crate::model::{HamiltonianSpec, PhasePoint, Which};

/// Time direction of the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }
}

/// Parameters of the doubling-ladder limit.
#[derive(Debug, Clone, Copy)]
pub struct LimitParams {
    /// Stop when successive limit estimates differ by less than this.
    pub limit_tol: f64,
    /// Ladder cap; exceeding it raises `LimitNotConverged`.
    pub t_cap: f64,
    /// First ladder rung.
    pub t0: f64,
    /// ODE tolerance for the underlying flows.
    pub tol: f64,
    /// Apply one Richardson step with the known tail orders.
    pub extrapolate: bool,
}

impl LimitParams {
    pub fn new(limit_tol: f64) -> Self {
        Self { limit_tol, t_cap: 16384.0, t0: 2.0, tol: 1e-10, extrapolate: true }
    }

    pub fn with_t_cap(mut self, t_cap: f64) -> Self {
        self.t_cap = t_cap;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ScatteringData {
    pub z_pm: Vec<f64>,
    pub xi_pm: Vec<f64>,
    pub direction: Direction,
    pub t_used: f64,
    /// Distance between the last two limit estimates.
    pub tail_estimate: f64,
    pub extrapolated: bool,
}

impl ScatteringData {
    pub fn point(&self) -> PhasePoint {
        PhasePoint::new(&self.z_pm, &self.xi_pm).expect("finite scattering data")
    }
}

#[derive(Debug, Clone)]
pub struct RateFitReport {
    pub fitted_exponent: f64,
    pub target_exponent: f64,
    /// |fitted − target|; reported, never clamped.
    pub exponent_gap: f64,
    pub max_residual: f64,
    /// (abscissa, value) pairs of the full ladder.
    pub samples: Vec<(f64, f64)>,
}

fn report_from_fit(fit: LineFit, target: f64, samples: Vec<(f64, f64)>) -> RateFitReport {
    RateFitReport {
        fitted_exponent: fit.slope,
        target_exponent: target,
        exponent_gap: (fit.slope - target).abs(),
        max_residual: fit.max_residual,
        samples,
    }
}

/// Richardson-extrapolate a doubling pair f(T/2), f(T) with tails C·T^{-p}
/// of known component-wise orders.
fn richardson(prev: &PhasePoint, cur: &PhasePoint, p_pos: f64, p_mom: f64) -> PhasePoint {
    let n = cur.dim();
    let gain_pos = 2f64.powf(p_pos) - 1.0;
    let gain_mom = 2f64.powf(p_mom) - 1.0;
    let mut x = [0.0; 2];
    let mut xi = [0.0; 2];
    for i in 0..n {
        x[i] = cur.x()[i] + (cur.x()[i] - prev.x()[i]) / gain_pos;
        xi[i] = cur.xi()[i] + (cur.xi()[i] - prev.xi()[i]) / gain_mom;
    }
    PhasePoint::new(&x[..n], &xi[..n]).expect("finite extrapolation")
}

/// Shared ladder driver: samples g(T) on t0·2^k up to t_cap, forms limit
/// estimates (Richardson when enabled), and stops once successive estimates
/// agree to `limit_tol` and the trajectory has visibly escaped. Returns
/// (estimate, t_used, tail_estimate).
fn ladder_limit(
    params: &LimitParams,
    mut g: impl FnMut(f64) -> Result<(PhasePoint, f64)>, // (reduced point, escape radius)
    p_pos: f64,
    p_mom: f64,
    escape_floor: f64,
) -> Result<(PhasePoint, f64, f64)> {
    let mut samples: Vec<PhasePoint> = Vec::new();
    let mut estimates: Vec<PhasePoint> = Vec::new();
    let mut radii: Vec<f64> = Vec::new();
    let mut t = params.t0;
    loop {
        let (w, r) = g(t)?;
        samples.push(w);
        radii.push(r);
        let est = if params.extrapolate && samples.len() >= 2 {
            richardson(&samples[samples.len() - 2], &w, p_pos, p_mom)
        } else {
            w
        };
        estimates.push(est);
        if estimates.len() >= 2 {
            let tail = estimates[estimates.len() - 2].dist(&est);
            let escaped = r >= escape_floor && r > radii[radii.len() - 2];
            if tail < params.limit_tol && escaped {
                return Ok((est, t, tail));
            }
        }
        if t >= params.t_cap {
            let escaped = radii.len() >= 2
                && *radii.last().unwrap() >= escape_floor
                && radii[radii.len() - 1] > radii[radii.len() - 2];
            if !escaped {
                return Err(Error::TrappedOrSlow(format!(
                    "|y({t})| = {:.3e} below escape floor {escape_floor:.3e}",
                    radii.last().unwrap()
                )));
            }
            let tail = estimates[estimates.len() - 2].dist(estimates.last().unwrap());
            return Err(Error::LimitNotConverged(format!(
                "ladder reached t_cap = {t} with tail {tail:.3e} > {:.3e}",
                params.limit_tol
            )));
        }
        t *= 2.0;
    }
}

fn require_short_range(spec: &HamiltonianSpec) -> Result<()> {
    if spec.mu() <= 1.0 {
        return Err(Error::InvalidInput(format!(
            "asymptotic position data requires mu > 1, got {}",
            spec.mu()
        )));
    }
    Ok(())
}

/// Scattering data (z±, ξ±) of z0 under the kinetic flow.
pub fn scattering_data(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    direction: Direction,
    params: &LimitParams,
) -> Result<ScatteringData> {
    require_short_range(spec)?;
    if z0.xi_norm() < spec.xi_min() {
        return Err(Error::ZeroMomentum(z0.xi_norm(), spec.xi_min()));
    }
    // flat metric: the kinetic flow is free and w₀(t) ≡ id exactly
    if spec.metric_family() == crate::model::MetricFamily::Flat {
        return Ok(ScatteringData {
            z_pm: z0.x().to_vec(),
            xi_pm: z0.xi().to_vec(),
            direction,
            t_used: params.t0,
            tail_estimate: 0.0,
            extrapolated: params.extrapolate,
        });
    }
    let sign = direction.sign();
    let escape_floor = 2.0 * perturbation_radius_proxy(spec);
    let mu = spec.mu();

    // continuation along the ladder: one integration pass, advanced lazily
    let mut cursor = FlowCursor::new(spec, Which::K, z0, params.tol)?;
    let (est, t_used, tail) = ladder_limit(
        params,
        |t_req| {
            let z = cursor.advance_to(sign * t_req)?;
            let w = free_reduce(&z, sign * t_req)?;
            let r = z.x().iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((w, r))
        },
        mu - 1.0,
        mu,
        escape_floor,
    )?;
    Ok(ScatteringData {
        z_pm: est.x().to_vec(),
        xi_pm: est.xi().to_vec(),
        direction,
        t_used,
        tail_estimate: tail,
        extrapolated: params.extrapolate,
    })
}

/// w±(z0) = lim exp(−tH_{p₀}) ∘ exp(tH_k)(z0) as a phase point.
pub fn w_pm_map(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    direction: Direction,
    params: &LimitParams,
) -> Result<PhasePoint> {
    Ok(scattering_data(spec, z0, direction, params)?.point())
}

/// w±^{-1}(z) by the reversed composition lim exp(−tH_k) ∘ exp(tH_{p₀}).
pub fn w_pm_inverse(
    spec: &HamiltonianSpec,
    z: &PhasePoint,
    direction: Direction,
    params: &LimitParams,
) -> Result<PhasePoint> {
    require_short_range(spec)?;
    if z.xi_norm() < spec.xi_min() {
        return Err(Error::ZeroMomentum(z.xi_norm(), spec.xi_min()));
    }
    if spec.metric_family() == crate::model::MetricFamily::Flat {
        return Ok(*z);
    }
    let sign = direction.sign();
    let escape_floor = 2.0 * perturbation_radius_proxy(spec);
    let mu = spec.mu();
    let n = spec.dim();
    let (est, _t_used, _tail) = ladder_limit(
        params,
        |t_req| {
            let ts = sign * t_req;
            let mut x = [0.0; 2];
            for i in 0..n {
                x[i] = z.x()[i] + ts * z.xi()[i];
            }
            let shifted = PhasePoint::new(&x[..n], z.xi())?;
            // the forward-shifted point measures escape for the reversed
            // composition
            let r = shifted.x().iter().map(|v| v * v).sum::<f64>().sqrt();
            let back = flow_checkpoints(spec, Which::K, &shifted, &[-ts], params.tol, false)?;
            Ok((back[0].0, r))
        },
        mu - 1.0,
        mu,
        escape_floor,
    )?;
    Ok(est)
}

#[derive(Debug, Clone)]
pub struct HomogeneityReport {
    /// max over λ of |z±(x,λξ) − z±(x,ξ)|
    pub max_position_err: f64,
    /// max over λ of |ξ±(x,λξ) − λξ±(x,ξ)| / λ
    pub max_momentum_err: f64,
    pub per_lambda: Vec<(f64, f64, f64)>,
}

/// Check order-0/order-1 homogeneity of (z±, ξ±) under ξ-scaling.
pub fn homogeneity_check(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    lambdas: &[f64],
    direction: Direction,
    params: &LimitParams,
) -> Result<HomogeneityReport> {
    if lambdas.iter().any(|&l| !(1.0..=16.0).contains(&l)) {
        return Err(Error::InvalidInput("lambdas must lie in [1, 16]".into()));
    }
    let base = scattering_data(spec, z0, direction, params)?;
    let n = spec.dim();
    let mut per = Vec::new();
    let mut max_p: f64 = 0.0;
    let mut max_m: f64 = 0.0;
    for &lam in lambdas {
        let xi: Vec<f64> = z0.xi().iter().map(|k| lam * k).collect();
        let zs = PhasePoint::new(z0.x(), &xi)?;
        let d = scattering_data(spec, &zs, direction, params)?;
        let mut pe = 0.0;
        let mut me = 0.0;
        for i in 0..n {
            pe += (d.z_pm[i] - base.z_pm[i]).powi(2);
            me += (d.xi_pm[i] - lam * base.xi_pm[i]).powi(2);
        }
        let pe = pe.sqrt();
        let me = me.sqrt() / lam;
        max_p = max_p.max(pe);
        max_m = max_m.max(me);
        per.push((lam, pe, me));
    }
    Ok(HomogeneityReport { max_position_err: max_p, max_momentum_err: max_m, per_lambda: per })
}

/// Fit the reduced-flow tails |z(t) − z±| ~ t^{1-μ} and |η(t) − ξ±| ~ t^{-μ}
/// on a geometric time ladder. Returns (position report, momentum report).
pub fn rate_fit_a1(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    direction: Direction,
    t_ladder: &[f64],
    params: &LimitParams,
) -> Result<(RateFitReport, RateFitReport)> {
    let mu = spec.mu();
    if !(mu > 1.0 && mu <= 2.0) {
        return Err(Error::InvalidInput(format!("rate fit requires mu in (1, 2], got {mu}")));
    }
    if t_ladder.len() < 6 {
        return Err(Error::InvalidInput("t ladder needs at least 6 points".into()));
    }
    let t_max = t_ladder.iter().cloned().fold(0.0, f64::max);
    let ref_params = LimitParams { t_cap: params.t_cap.max(16.0 * t_max), ..*params };
    let reference = scattering_data(spec, z0, direction, &ref_params)?.point();

    let sign = direction.sign();
    let rungs: Vec<f64> = t_ladder.iter().map(|&t| sign * t).collect();
    let states = flow_checkpoints(spec, Which::K, z0, &rungs, params.tol, false)?;
    let n = spec.dim();
    let mut pos_samples = Vec::new();
    let mut mom_samples = Vec::new();
    for (&t, (z, _)) in t_ladder.iter().zip(&states) {
        let w = free_reduce(z, sign * t)?;
        let mut dp = 0.0;
        let mut dm = 0.0;
        for i in 0..n {
            dp += (w.x()[i] - reference.x()[i]).powi(2);
            dm += (w.xi()[i] - reference.xi()[i]).powi(2);
        }
        pos_samples.push((t, dp.sqrt()));
        mom_samples.push((t, dm.sqrt()));
    }
    let floor = 10.0 * params.limit_tol;
    let make = |samples: &[(f64, f64)], target: f64| -> Result<RateFitReport> {
        let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let fit = loglog_slope_last_half(&xs, &ys, floor).ok_or_else(|| {
            Error::DegenerateFit(format!(
                "tail differences below 10×limit_tol = {floor:.3e}; increase |xi| or c"
            ))
        })?;
        Ok(report_from_fit(fit, target, samples.to_vec()))
    };
    Ok((make(&pos_samples, 1.0 - mu)?, make(&mom_samples, -mu)?))
}

/// Fit |w(t) − w₀(t)| against |ξ| at fixed t. For potentials in the
/// subquadratic class the difference scales like ⟨ξ⟩^{1-μ} in both
/// components. Returns (position report, momentum report).
pub fn rate_fit_a2(
    spec: &HamiltonianSpec,
    t_fixed: f64,
    xi_ladder: &[f64],
    x0: &[f64],
    params: &LimitParams,
) -> Result<(RateFitReport, RateFitReport)> {
    if !spec.has_potential() {
        return Err(Error::InvalidInput(
            "rate fit of w(t) − w₀(t) requires a nonzero potential".into(),
        ));
    }
    let mu = spec.mu();
    if !(mu > 1.0 && mu < 2.0) {
        return Err(Error::InvalidInput(format!("rate fit requires mu in (1, 2), got {mu}")));
    }
    if !(0.5..=5.0).contains(&t_fixed) {
        return Err(Error::InvalidInput(format!("t_fixed must lie in [0.5, 5], got {t_fixed}")));
    }
    if xi_ladder.len() < 6 {
        return Err(Error::InvalidInput("xi ladder needs at least 6 points".into()));
    }
    let n = spec.dim();
    let mut pos_samples = Vec::new();
    let mut mom_samples = Vec::new();
    for &s in xi_ladder {
        let mut xi = vec![0.0; n];
        xi[0] = s;
        let z0 = PhasePoint::new(x0, &xi)?;
        let w = reduced_flow(spec, ReducedMap::W, &z0, t_fixed, params.tol)?;
        let w0 = reduced_flow(spec, ReducedMap::W0, &z0, t_fixed, params.tol)?;
        let mut dp = 0.0;
        let mut dm = 0.0;
        for i in 0..n {
            dp += (w.x()[i] - w0.x()[i]).powi(2);
            dm += (w.xi()[i] - w0.xi()[i]).powi(2);
        }
        pos_samples.push((s, dp.sqrt()));
        mom_samples.push((s, dm.sqrt()));
    }
    let floor = 10.0 * params.limit_tol;
    let make = |samples: &[(f64, f64)], target: f64| -> Result<RateFitReport> {
        let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let fit = loglog_slope_last_half(&xs, &ys, floor)
            .ok_or_else(|| Error::DegenerateFit("differences below 10×limit_tol".into()))?;
        Ok(report_from_fit(fit, target, samples.to_vec()))
    };
    Ok((make(&pos_samples, 1.0 - mu)?, make(&mom_samples, 1.0 - mu)?))
}

#[derive(Debug, Clone)]
pub struct AsymptoticHomogeneityReport {
    pub position_fit: RateFitReport,
    /// sup over the ladder of |y − y_c|·|ξ|^{μ-1}
    pub sup_scaled: f64,
    /// fitted slope ≤ −(μ−1) + 0.15
    pub pass: bool,
    /// the scaled differences stayed bounded across the ladder
    pub order0_bounded: bool,
}

/// Compare the finite-time map w(t) against the homogeneous limit map w±
/// along a |ξ| ladder: asymptotic homogeneity with ε = μ − 1.
pub fn asymptotic_homogeneity_check(
    spec: &HamiltonianSpec,
    t_fixed: f64,
    x0: &[f64],
    xi_ladder: &[f64],
    direction: Direction,
    params: &LimitParams,
) -> Result<AsymptoticHomogeneityReport> {
    let mu = spec.mu();
    if !(mu > 1.0 && mu <= 2.0) {
        return Err(Error::InvalidInput(format!("requires mu in (1, 2], got {mu}")));
    }
    if t_fixed * direction.sign() <= 0.0 {
        return Err(Error::InvalidInput("±t_fixed must be positive for direction ±".into()));
    }
    let eps = mu - 1.0;
    let n = spec.dim();
    let mut samples = Vec::new();
    let mut sup_scaled: f64 = 0.0;
    for &s in xi_ladder {
        let mut xi = vec![0.0; n];
        xi[0] = s;
        let z0 = PhasePoint::new(x0, &xi)?;
        let y = reduced_flow(spec, ReducedMap::W, &z0, t_fixed, params.tol)?;
        let yc = w_pm_map(spec, &z0, direction, params)?;
        let mut dp = 0.0;
        for i in 0..n {
            dp += (y.x()[i] - yc.x()[i]).powi(2);
        }
        let dp = dp.sqrt();
        samples.push((s, dp));
        sup_scaled = sup_scaled.max(dp * s.powf(eps));
    }
    let floor = 10.0 * params.limit_tol;
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = loglog_slope_last_half(&xs, &ys, floor)
        .ok_or_else(|| Error::DegenerateFit("position differences below 10×limit_tol".into()))?;
    let report = report_from_fit(fit, -eps, samples.clone());
    let pass = report.fitted_exponent <= -eps + 0.15;
    // bounded: the scaled differences do not grow along the second half
    let half = samples.len() / 2;
    let scaled: Vec<f64> = samples.iter().map(|&(s, d)| d * s.powf(eps)).collect();
    let head_max = scaled[..half.max(1)].iter().cloned().fold(0.0f64, f64::max);
    let tail_max = scaled[half..].iter().cloned().fold(0.0f64, f64::max);
    let order0_bounded = tail_max <= 2.0 * head_max;
    Ok(AsymptoticHomogeneityReport { position_fit: report, sup_scaled, pass, order0_bounded })
}

/// Symplectic defect of the Jacobian of w₀(±t_large) at z0.
pub fn canonical_transform_check(
    spec: &HamiltonianSpec,
    z0: &PhasePoint,
    direction: Direction,
    t_large: f64,
    tol: f64,
) -> Result<f64> {
    let j = reduced_flow_jacobian(spec, ReducedMap::W0, z0, direction.sign() * t_large, tol)?;
    Ok(symplectic_defect(&j))
}
