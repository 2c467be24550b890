//! Hamiltonian families with closed-form derivatives.
//!
//! The metric is a decaying perturbation of the identity, `a_jk(x) = δ_jk +
//! (bump)·⟨x⟩^{-μ}`, and the potential either decays like `⟨x⟩^{-μ}` or grows
//! subquadratically like `⟨x⟩^{2-μ}`, with `⟨x⟩ = (1+|x|²)^{1/2}`. Only
//! builtin families are supported so that derivatives of every order are
//! available in closed form.
//!
//! Specs may carry a boundary window that flattens the perturbation outside a
//! radius; quantum experiments on a periodic box use it so that the classical
//! maps and the grid Hamiltonian see the same coefficients.

use crate::bracket::BracketPoly;
use crate::error::{Error, Result};

pub const DEFAULT_XI_MIN: f64 = 1e-6;

/// Japanese bracket ⟨x⟩ = (1+|x|²)^{1/2}.
pub fn jap_bracket(x: &[f64]) -> f64 {
    (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Potential may grow subquadratically (⟨x⟩^{2-μ}).
    A,
    /// Short-range: metric and potential both decay like ⟨x⟩^{-μ}, μ > 1.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricFamily {
    Flat,
    /// a_jk(x) = δ_jk (1 + c ⟨x⟩^{-μ})
    IsotropicBump { c: f64 },
    /// a_jk(x) = δ_jk + c ⟨x⟩^{-μ} e_j e_k with unit direction e
    AnisotropicBump { c: f64, direction: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialFamily {
    Zero,
    /// V(x) = v0 ⟨x⟩^{-μ}
    PowerDecay { v0: f64 },
    /// V(x) = v0 ⟨x⟩^{2-μ}
    Subquadratic { v0: f64 },
}

/// C⁴ radial window: 1 for r ≤ r_flat, 0 for r ≥ r_zero.
///
/// Transition by the degree-9 smoothstep, whose derivative 630 u⁴(1-u)⁴
/// vanishes to fourth order at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryWindow {
    pub r_flat: f64,
    pub r_zero: f64,
}

impl BoundaryWindow {
    pub fn new(r_flat: f64, r_zero: f64) -> Result<Self> {
        if !(r_flat.is_finite() && r_zero.is_finite()) || r_flat <= 0.0 || r_zero <= r_flat {
            return Err(Error::InvalidSpec(format!(
                "window radii must satisfy 0 < r_flat < r_zero, got ({r_flat}, {r_zero})"
            )));
        }
        Ok(Self { r_flat, r_zero })
    }

    /// Window value and first two radial derivatives at radius r.
    fn radial(&self, r: f64) -> (f64, f64, f64) {
        if r <= self.r_flat {
            return (1.0, 0.0, 0.0);
        }
        if r >= self.r_zero {
            return (0.0, 0.0, 0.0);
        }
        let d = self.r_zero - self.r_flat;
        let u = (r - self.r_flat) / d;
        let s = ((((70.0 * u - 315.0) * u + 540.0) * u - 420.0) * u + 126.0) * u.powi(5);
        let u1m = 1.0 - u;
        let sp = 630.0 * u.powi(4) * u1m.powi(4);
        let spp = 2520.0 * u.powi(3) * u1m.powi(3) * (1.0 - 2.0 * u);
        (1.0 - s, -sp / d, -spp / (d * d))
    }

    /// Value, gradient and Hessian of the window as a function of x.
    fn eval(&self, x: &[f64]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let n = x.len();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (s, s1, s2) = self.radial(r);
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        if s1 == 0.0 && s2 == 0.0 {
            return (s, grad, hess);
        }
        // r > r_flat > 0 here, so the radial chain rule is regular
        for i in 0..n {
            grad[i] = s1 * x[i] / r;
        }
        for i in 0..n {
            for j in 0..n {
                let d = if i == j { 1.0 } else { 0.0 };
                hess[i][j] =
                    s2 * x[i] * x[j] / (r * r) + s1 * (d / r - x[i] * x[j] / (r * r * r));
            }
        }
        (s, grad, hess)
    }
}

/// Phase-space point (x, ξ) ∈ ℝⁿ×ℝⁿ, n ∈ {1,2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    n: usize,
    x: [f64; 2],
    xi: [f64; 2],
}

impl PhasePoint {
    pub fn new(x: &[f64], xi: &[f64]) -> Result<Self> {
        let n = x.len();
        if n == 0 || n > 2 || xi.len() != n {
            return Err(Error::InvalidInput(format!(
                "phase point dimension must be 1 or 2, got x: {}, xi: {}",
                x.len(),
                xi.len()
            )));
        }
        if !x.iter().chain(xi.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite phase point".into()));
        }
        let mut xs = [0.0; 2];
        let mut ks = [0.0; 2];
        xs[..n].copy_from_slice(x);
        ks[..n].copy_from_slice(xi);
        Ok(Self { n, x: xs, xi: ks })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi[..self.n]
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance in phase space.
    pub fn dist(&self, other: &PhasePoint) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += (self.x[i] - other.x[i]).powi(2) + (self.xi[i] - other.xi[i]).powi(2);
        }
        s.sqrt()
    }
}

/// Which Hamiltonian drives a flow: full p = k + V, kinetic k, or free p₀ = |ξ|²/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    P,
    K,
    P0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    n: usize,
    metric: MetricFamily,
    potential: PotentialFamily,
    mu: f64,
    assumption: Assumption,
    window: Option<BoundaryWindow>,
    xi_min: f64,
}

impl HamiltonianSpec {
    pub fn new(
        n: usize,
        metric: MetricFamily,
        potential: PotentialFamily,
        mu: f64,
        assumption: Assumption,
    ) -> Result<Self> {
        if n == 0 || n > 2 {
            return Err(Error::InvalidSpec(format!("dimension must be 1 or 2, got {n}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidSpec(format!("decay exponent mu must be > 0, got {mu}")));
        }
        match metric {
            MetricFamily::Flat => {}
            MetricFamily::IsotropicBump { c } | MetricFamily::AnisotropicBump { c, .. } => {
                // |c| < 1 keeps the smallest metric eigenvalue >= 1 - |c| > 0
                if !(c.is_finite() && c.abs() < 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "bump amplitude must satisfy |c| < 1, got {c}"
                    )));
                }
            }
        }
        if let MetricFamily::AnisotropicBump { direction, .. } = metric {
            let norm = direction[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::InvalidSpec("anisotropic direction must be nonzero".into()));
            }
        }
        if assumption == Assumption::B {
            if mu <= 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "assumption B requires mu > 1, got {mu}"
                )));
            }
            if matches!(potential, PotentialFamily::Subquadratic { .. }) {
                return Err(Error::InvalidSpec(
                    "assumption B admits only zero or power-decay potentials".into(),
                ));
            }
        }
        let spec = Self {
            n,
            metric,
            potential,
            mu,
            assumption,
            window: None,
            xi_min: DEFAULT_XI_MIN,
        };
        spec.check_metric_positivity()?;
        Ok(spec)
    }

    pub fn flat_free(n: usize) -> Self {
        Self::new(n, MetricFamily::Flat, PotentialFamily::Zero, 2.0, Assumption::B).unwrap()
    }

    /// Flatten the perturbation outside `r_flat`, vanishing by `r_zero`.
    pub fn with_window(mut self, window: BoundaryWindow) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_xi_min(mut self, xi_min: f64) -> Self {
        self.xi_min = xi_min;
        self
    }

    fn check_metric_positivity(&self) -> Result<()> {
        let c = match self.metric {
            MetricFamily::Flat => return Ok(()),
            MetricFamily::IsotropicBump { c } | MetricFamily::AnisotropicBump { c, .. } => c,
        };
        let floor = 1.0 - c.abs();
        let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
        for k in 0..24 {
            let r = 0.25 * 1.5f64.powi(k % 8) * (1 + k / 8) as f64;
            let th = 0.7 * k as f64;
            pts.push([r * th.cos(), r * th.sin()]);
        }
        for p in pts {
            let a = self.metric_matrix(&p[..self.n]);
            let min_eig = sym2_min_eig(a, self.n);
            if min_eig < floor - 1e-12 {
                return Err(Error::InvalidSpec(format!(
                    "metric eigenvalue {min_eig} below 1-|c| = {floor}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn assumption(&self) -> Assumption {
        self.assumption
    }
    pub fn metric_family(&self) -> MetricFamily {
        self.metric
    }
    pub fn potential_family(&self) -> PotentialFamily {
        self.potential
    }
    pub fn window(&self) -> Option<BoundaryWindow> {
        self.window
    }
    pub fn xi_min(&self) -> f64 {
        self.xi_min
    }

    pub fn is_flat_free(&self) -> bool {
        self.metric == MetricFamily::Flat && self.potential == PotentialFamily::Zero
    }

    pub fn has_potential(&self) -> bool {
        !matches!(self.potential, PotentialFamily::Zero)
    }

    /// Scalar bump profile g(x) and its gradient/Hessian, window applied.
    ///
    /// For both bump families the metric perturbation is `g(x)·d_jk` with a
    /// constant symmetric structure matrix d.
    fn bump_profile(&self, x: &[f64]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let c = match self.metric {
            MetricFamily::Flat => return (0.0, [0.0; 2], [[0.0; 2]; 2]),
            MetricFamily::IsotropicBump { c } | MetricFamily::AnisotropicBump { c, .. } => c,
        };
        let p = -self.mu / 2.0;
        self.windowed_bracket_power(x, c, p)
    }

    /// c·⟨x⟩^{2p} (= c·B^p with B = 1+|x|²) with gradient and Hessian,
    /// multiplied by the boundary window when present.
    fn windowed_bracket_power(&self, x: &[f64], c: f64, p: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let n = self.n;
        let b = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        // single transcendental per evaluation; lower powers by division
        let bp = b.powf(p);
        let bp1 = bp / b;
        let bp2 = bp1 / b;
        let g = c * bp;
        let mut dg = [0.0; 2];
        let mut hg = [[0.0; 2]; 2];
        for i in 0..n {
            dg[i] = 2.0 * c * p * bp1 * x[i];
        }
        for i in 0..n {
            for j in 0..n {
                let d = if i == j { 1.0 } else { 0.0 };
                hg[i][j] = 2.0 * c * p * bp1 * d + 4.0 * c * p * (p - 1.0) * bp2 * x[i] * x[j];
            }
        }
        match self.window {
            None => (g, dg, hg),
            Some(w) => {
                let (s, ds, hs) = w.eval(x);
                let mut grad = [0.0; 2];
                let mut hess = [[0.0; 2]; 2];
                for i in 0..n {
                    grad[i] = ds[i] * g + s * dg[i];
                }
                for i in 0..n {
                    for j in 0..n {
                        hess[i][j] =
                            hs[i][j] * g + ds[i] * dg[j] + ds[j] * dg[i] + s * hg[i][j];
                    }
                }
                (s * g, grad, hess)
            }
        }
    }

    fn structure(&self) -> [[f64; 2]; 2] {
        match self.metric {
            MetricFamily::Flat => [[0.0; 2]; 2],
            MetricFamily::IsotropicBump { .. } => [[1.0, 0.0], [0.0, 1.0]],
            MetricFamily::AnisotropicBump { direction, .. } => {
                let norm = direction[..self.n].iter().map(|v| v * v).sum::<f64>().sqrt();
                let e = [direction[0] / norm, direction[1] / norm];
                let mut m = [[0.0; 2]; 2];
                for i in 0..self.n {
                    for j in 0..self.n {
                        m[i][j] = e[i] * e[j];
                    }
                }
                m
            }
        }
    }

    /// Metric matrix a_jk(x).
    pub fn metric_matrix(&self, x: &[f64]) -> [[f64; 2]; 2] {
        let (g, _, _) = self.bump_profile(x);
        let d = self.structure();
        let mut a = [[0.0; 2]; 2];
        for i in 0..self.n {
            for j in 0..self.n {
                a[i][j] = if i == j { 1.0 } else { 0.0 } + g * d[i][j];
            }
        }
        a
    }

    /// ∂_i a_jk(x), indexed grad[i][j][k].
    pub fn metric_grad(&self, x: &[f64]) -> [[[f64; 2]; 2]; 2] {
        let (_, dg, _) = self.bump_profile(x);
        let d = self.structure();
        let mut out = [[[0.0; 2]; 2]; 2];
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    out[i][j][k] = dg[i] * d[j][k];
                }
            }
        }
        out
    }

    /// ∂_i ∂_l a_jk(x), indexed hess[i][l][j][k].
    pub fn metric_hess(&self, x: &[f64]) -> [[[[f64; 2]; 2]; 2]; 2] {
        let (_, _, hg) = self.bump_profile(x);
        let d = self.structure();
        let mut out = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..self.n {
            for l in 0..self.n {
                for j in 0..self.n {
                    for k in 0..self.n {
                        out[i][l][j][k] = hg[i][l] * d[j][k];
                    }
                }
            }
        }
        out
    }

    fn potential_profile(&self, x: &[f64]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        match self.potential {
            PotentialFamily::Zero => (0.0, [0.0; 2], [[0.0; 2]; 2]),
            PotentialFamily::PowerDecay { v0 } => {
                self.windowed_bracket_power(x, v0, -self.mu / 2.0)
            }
            PotentialFamily::Subquadratic { v0 } => {
                self.windowed_bracket_power(x, v0, (2.0 - self.mu) / 2.0)
            }
        }
    }

    pub fn eval_potential(&self, x: &[f64]) -> f64 {
        self.potential_profile(x).0
    }

    pub fn potential_grad(&self, x: &[f64]) -> [f64; 2] {
        self.potential_profile(x).1
    }

    /// Kinetic energy k(x,ξ) = ½ Σ a_jk(x) ξ_j ξ_k.
    pub fn eval_kinetic(&self, z: &PhasePoint) -> f64 {
        let a = self.metric_matrix(z.x());
        let xi = z.xi();
        let mut s = 0.0;
        for j in 0..self.n {
            for k in 0..self.n {
                s += a[j][k] * xi[j] * xi[k];
            }
        }
        0.5 * s
    }

    /// Energy for the chosen Hamiltonian.
    pub fn eval_energy(&self, which: Which, z: &PhasePoint) -> f64 {
        let p0 = 0.5 * z.xi().iter().map(|v| v * v).sum::<f64>();
        match which {
            Which::P0 => p0,
            Which::K => self.eval_kinetic(z),
            Which::P => self.eval_kinetic(z) + self.eval_potential(z.x()),
        }
    }

    /// Hamilton vector field (∂_ξ h, −∂_x h) as a flat [ẋ, ξ̇] tangent vector.
    pub fn hamilton_vector_field(&self, which: Which, z: &PhasePoint) -> [f64; 4] {
        let n = self.n;
        let x = z.x();
        let xi = z.xi();
        let mut out = [0.0; 4];
        if which == Which::P0 {
            out[..n].copy_from_slice(xi);
            return out;
        }
        let (g, dg, _) = self.bump_profile(x);
        let d = self.structure();
        // ẋ_i = Σ_k a_ik ξ_k
        for i in 0..n {
            let mut v = xi[i];
            for k in 0..n {
                v += g * d[i][k] * xi[k];
            }
            out[i] = v;
        }
        // ξ̇_i = −½ Σ_jk ∂_i a_jk ξ_j ξ_k − ∂_i V
        let mut quad = 0.0;
        for j in 0..n {
            for k in 0..n {
                quad += d[j][k] * xi[j] * xi[k];
            }
        }
        for i in 0..n {
            out[n + i] = -0.5 * dg[i] * quad;
        }
        if which == Which::P {
            let dv = self.potential_grad(x);
            for i in 0..n {
                out[n + i] -= dv[i];
            }
        }
        out
    }

    /// Second-derivative blocks of h at z for the variational equations:
    /// (h_xx, h_xξ, h_ξξ) with h_xξ[i][j] = ∂x_i ∂ξ_j h.
    pub fn hessian_blocks(
        &self,
        which: Which,
        z: &PhasePoint,
    ) -> ([[f64; 2]; 2], [[f64; 2]; 2], [[f64; 2]; 2]) {
        let n = self.n;
        let xi = z.xi();
        let mut hxx = [[0.0; 2]; 2];
        let mut hxxi = [[0.0; 2]; 2];
        let mut hxixi = [[0.0; 2]; 2];
        if which == Which::P0 {
            for i in 0..n {
                hxixi[i][i] = 1.0;
            }
            return (hxx, hxxi, hxixi);
        }
        let x = z.x();
        let (g, dg, hg) = self.bump_profile(x);
        let d = self.structure();
        let mut quad = 0.0;
        for j in 0..n {
            for k in 0..n {
                quad += d[j][k] * xi[j] * xi[k];
            }
        }
        for i in 0..n {
            for j in 0..n {
                let dlt = if i == j { 1.0 } else { 0.0 };
                hxixi[i][j] = dlt + g * d[i][j];
                // ∂x_i ∂ξ_j k = Σ_k ∂_i a_jk ξ_k
                let mut v = 0.0;
                for k in 0..n {
                    v += dg[i] * d[j][k] * xi[k];
                }
                hxxi[i][j] = v;
                hxx[i][j] = 0.5 * hg[i][j] * quad;
            }
        }
        if which == Which::P {
            let (_, _, hv) = self.potential_profile(x);
            for i in 0..n {
                for j in 0..n {
                    hxx[i][j] += hv[i][j];
                }
            }
        }
        (hxx, hxxi, hxixi)
    }

    /// Closed-form metric perturbation entries as bracket polynomials
    /// (window excluded; used for decay-rate verification).
    pub fn metric_perturbation_poly(&self) -> Vec<BracketPoly> {
        let (c, d) = match self.metric {
            MetricFamily::Flat => return vec![BracketPoly::zero(self.n)],
            MetricFamily::IsotropicBump { c } => (c, self.structure()),
            MetricFamily::AnisotropicBump { c, .. } => (c, self.structure()),
        };
        let mut polys = Vec::new();
        for j in 0..self.n {
            for k in j..self.n {
                if d[j][k] != 0.0 {
                    polys.push(BracketPoly::bracket_power(self.n, c * d[j][k], -self.mu / 2.0));
                }
            }
        }
        if polys.is_empty() {
            polys.push(BracketPoly::zero(self.n));
        }
        polys
    }
}

fn sym2_min_eig(a: [[f64; 2]; 2], n: usize) -> f64 {
    if n == 1 {
        return a[0][0];
    }
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    tr / 2.0 - disc
}

/// One row of the decay-verification table for a multi-index α.
#[derive(Debug, Clone)]
pub struct DecayRow {
    pub alpha: Vec<u32>,
    /// Fitted slope of log|∂^α(a-δ)| vs log⟨x⟩; None when identically zero.
    pub slope: Option<f64>,
    /// Largest observed |∂^α(a-δ)| / ⟨x⟩^{-μ-|α|}.
    pub c_alpha: f64,
    pub identically_zero: bool,
}

/// Fit the decay rate of metric-perturbation derivatives against the
/// assumption bound ⟨x⟩^{-μ-|α|}.
///
/// Values are maximized over a direction set and over the (j,k) entries at
/// each radius. Boundary windows are ignored: the fit targets the family's
/// intrinsic decay.
pub fn verify_assumption_decay(
    spec: &HamiltonianSpec,
    multi_indices: &[Vec<u32>],
    radius_list: &[f64],
) -> Result<Vec<DecayRow>> {
    const ZERO_FLOOR: f64 = 1e-14;
    if radius_list.len() < 2 {
        return Err(Error::InvalidInput("need at least two radii".into()));
    }
    for alpha in multi_indices {
        let total: u32 = alpha.iter().sum();
        if total > 4 || alpha.len() != spec.dim() {
            return Err(Error::InvalidInput(format!(
                "multi-index {alpha:?} outside supported range |alpha| <= 4"
            )));
        }
    }
    let dirs: Vec<[f64; 2]> = if spec.dim() == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..8)
            .map(|k| {
                let th = std::f64::consts::PI * k as f64 / 4.0;
                [th.cos(), th.sin()]
            })
            .collect()
    };
    let polys = spec.metric_perturbation_poly();
    let mut rows = Vec::new();
    for alpha in multi_indices {
        let dpolys: Vec<BracketPoly> = polys.iter().map(|p| p.derivative_multi(alpha)).collect();
        let total: u32 = alpha.iter().sum();
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        let mut c_alpha: f64 = 0.0;
        let mut any = false;
        for &r in radius_list {
            let mut val: f64 = 0.0;
            for d in &dirs {
                let x = [r * d[0], r * d[1]];
                for p in &dpolys {
                    val = val.max(p.eval(&x[..spec.dim()]).abs());
                }
            }
            let br = jap_bracket(&[r]);
            if val > ZERO_FLOOR {
                any = true;
                lx.push(br.ln());
                ly.push(val.ln());
                c_alpha = c_alpha.max(val * br.powf(spec.mu() + f64::from(total)));
            }
        }
        if !any {
            rows.push(DecayRow {
                alpha: alpha.clone(),
                slope: None,
                c_alpha: 0.0,
                identically_zero: true,
            });
            continue;
        }
        if lx.len() < 2 {
            return Err(Error::DegenerateFit(format!(
                "multi-index {alpha:?}: fewer than two radii above the zero floor"
            )));
        }
        let fit = crate::fit::line_fit(&lx, &ly);
        rows.push(DecayRow {
            alpha: alpha.clone(),
            slope: Some(fit.slope),
            c_alpha,
            identically_zero: false,
        });
    }
    if rows.iter().all(|r| r.identically_zero) && spec.metric_family() != MetricFamily::Flat {
        return Err(Error::DegenerateFit(
            "all sampled derivatives below 1e-14 for a non-flat family".into(),
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bump_spec(n: usize, c: f64, mu: f64) -> HamiltonianSpec {
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
    fn kinetic_flat_and_bump_values() {
        let flat = HamiltonianSpec::flat_free(2);
        let z = PhasePoint::new(&[0.3, -1.0], &[2.0, 0.0]).unwrap();
        assert_relative_eq!(flat.eval_kinetic(&z), 2.0);

        let spec = bump_spec(1, 0.3, 2.0);
        let z0 = PhasePoint::new(&[0.0], &[1.0]).unwrap();
        assert_relative_eq!(spec.eval_kinetic(&z0), 0.65);

        // <2>^2 = 5, a(2) = 1 + 0.3*5^{-0.75}
        let spec = bump_spec(1, 0.3, 1.5);
        let z2 = PhasePoint::new(&[2.0], &[1.0]).unwrap();
        let expected = 0.5 * (1.0 + 0.3 * 5.0f64.powf(-0.75));
        assert_relative_eq!(spec.eval_kinetic(&z2), expected, max_relative = 1e-14);
    }

    #[test]
    fn potential_values() {
        let zero = HamiltonianSpec::flat_free(1);
        assert_eq!(zero.eval_potential(&[3.7]), 0.0);

        let pd = HamiltonianSpec::new(
            1,
            MetricFamily::Flat,
            PotentialFamily::PowerDecay { v0: 1.0 },
            2.0,
            Assumption::B,
        )
        .unwrap();
        assert_relative_eq!(pd.eval_potential(&[0.0]), 1.0);

        // subquadratic, <x>^2 = 2 at (1,0): V = 2 * 2^{(2-1.5)/2} = 2*2^{0.25}
        let sq = HamiltonianSpec::new(
            2,
            MetricFamily::Flat,
            PotentialFamily::Subquadratic { v0: 2.0 },
            1.5,
            Assumption::A,
        )
        .unwrap();
        assert_relative_eq!(
            sq.eval_potential(&[1.0, 0.0]),
            2.0 * 2.0f64.powf(0.25),
            max_relative = 1e-14
        );
    }

    #[test]
    fn vector_field_free_and_flat() {
        let flat = HamiltonianSpec::flat_free(2);
        let z = PhasePoint::new(&[0.4, 0.9], &[1.0, -2.0]).unwrap();
        let f0 = flat.hamilton_vector_field(Which::P0, &z);
        assert_eq!(&f0[..2], z.xi());
        assert_eq!(&f0[2..4], &[0.0, 0.0]);
        let fp = flat.hamilton_vector_field(Which::P, &z);
        assert_eq!(f0, fp);
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        let eval = |xs: &mut [f64], d: f64| {
            xs[i] = x[i] + d;
            f(xs)
        };
        (-eval(&mut xp, 2.0 * h) + 8.0 * eval(&mut xp, h) - 8.0 * eval(&mut xp, -h)
            + eval(&mut xp, -2.0 * h))
            / (12.0 * h)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut specs = vec![
            bump_spec(1, 0.3, 1.5),
            bump_spec(2, -0.4, 2.0),
            HamiltonianSpec::new(
                2,
                MetricFamily::AnisotropicBump { c: 0.5, direction: [1.0, 2.0] },
                PotentialFamily::Subquadratic { v0: 0.7 },
                1.5,
                Assumption::A,
            )
            .unwrap(),
            HamiltonianSpec::new(
                1,
                MetricFamily::IsotropicBump { c: 0.2 },
                PotentialFamily::PowerDecay { v0: 0.5 },
                1.2,
                Assumption::B,
            )
            .unwrap(),
        ];
        // windowed variant exercises the product rule against FD too
        specs.push(bump_spec(2, 0.3, 2.0).with_window(BoundaryWindow::new(1.5, 4.0).unwrap()));

        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
        };
        for spec in &specs {
            let n = spec.dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| next()).collect();
                let xi: Vec<f64> = (0..n).map(|_| next() + 0.1).collect();
                let z = PhasePoint::new(&x, &xi).unwrap();
                for which in [Which::P, Which::K] {
                    let f = spec.hamilton_vector_field(which, &z);
                    for i in 0..n {
                        let fd_xi = fd_grad(
                            |xs| {
                                let mut k = xi.clone();
                                k[i] = xs[0];
                                spec.eval_energy(which, &PhasePoint::new(&x, &k).unwrap())
                            },
                            &[xi[i]],
                            0,
                            1e-3,
                        );
                        let denom = fd_xi.abs().max(1e-3);
                        assert!(
                            (f[i] - fd_xi).abs() / denom < 1e-6,
                            "d/dxi mismatch: {} vs {}",
                            f[i],
                            fd_xi
                        );
                        let fd_x = fd_grad(
                            |xs| {
                                let mut xx = x.clone();
                                xx[i] = xs[0];
                                spec.eval_energy(which, &PhasePoint::new(&xx, &xi).unwrap())
                            },
                            &[x[i]],
                            0,
                            1e-3,
                        );
                        let denom = fd_x.abs().max(1e-3);
                        assert!(
                            (f[n + i] + fd_x).abs() / denom < 1e-6,
                            "d/dx mismatch: {} vs {}",
                            f[n + i],
                            -fd_x
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_blocks_match_fd_of_vector_field() {
        let spec = HamiltonianSpec::new(
            2,
            MetricFamily::AnisotropicBump { c: 0.4, direction: [2.0, -1.0] },
            PotentialFamily::PowerDecay { v0: 0.6 },
            1.5,
            Assumption::B,
        )
        .unwrap()
        .with_window(BoundaryWindow::new(2.0, 5.0).unwrap());
        let x = [0.7, 2.4];
        let xi = [1.3, -0.8];
        let z = PhasePoint::new(&x, &xi).unwrap();
        let (hxx, hxxi, hxixi) = spec.hessian_blocks(Which::P, &z);
        let h = 1e-4;
        for i in 0..2 {
            for j in 0..2 {
                // ∂ξ_j ∂ξ_i h via FD of the energy
                let fdxixi = {
                    let f = |di: f64, dj: f64| {
                        let mut k = xi;
                        k[i] += di;
                        k[j] += dj;
                        spec.eval_energy(Which::P, &PhasePoint::new(&x, &k).unwrap())
                    };
                    (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
                };
                assert_relative_eq!(hxixi[i][j], fdxixi, max_relative = 1e-5, epsilon = 1e-7);
                let fdxx = {
                    let f = |di: f64, dj: f64| {
                        let mut xx = x;
                        xx[i] += di;
                        xx[j] += dj;
                        spec.eval_energy(Which::P, &PhasePoint::new(&xx, &xi).unwrap())
                    };
                    (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
                };
                assert_relative_eq!(hxx[i][j], fdxx, max_relative = 1e-4, epsilon = 1e-6);
                let fdxxi = {
                    let f = |di: f64, dj: f64| {
                        let mut xx = x;
                        let mut k = xi;
                        xx[i] += di;
                        k[j] += dj;
                        spec.eval_energy(Which::P, &PhasePoint::new(&xx, &k).unwrap())
                    };
                    (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
                };
                assert_relative_eq!(hxxi[i][j], fdxxi, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn kinetic_homogeneity_order_two() {
        let spec = bump_spec(2, 0.45, 1.5);
        let z = PhasePoint::new(&[0.2, -0.7], &[1.1, 0.4]).unwrap();
        let k1 = spec.eval_kinetic(&z);
        for lam in [0.5, 2.0, 7.0] {
            let zs = PhasePoint::new(z.x(), &[1.1 * lam, 0.4 * lam]).unwrap();
            assert_relative_eq!(spec.eval_kinetic(&zs), lam * lam * k1, max_relative = 1e-14);
        }
    }

    #[test]
    fn kinetic_positive_for_nonzero_momentum() {
        let spec = bump_spec(1, -0.9, 2.0);
        for &x in &[0.0, 1.0, 10.0] {
            let z = PhasePoint::new(&[x], &[1e-3]).unwrap();
            assert!(spec.eval_kinetic(&z) > 0.0);
        }
    }

    #[test]
    fn spec_validation_rejects_bad_parameters() {
        assert!(HamiltonianSpec::new(
            1,
            MetricFamily::IsotropicBump { c: 1.0 },
            PotentialFamily::Zero,
            2.0,
            Assumption::B
        )
        .is_err());
        assert!(HamiltonianSpec::new(
            1,
            MetricFamily::Flat,
            PotentialFamily::Zero,
            0.9,
            Assumption::B
        )
        .is_err());
        assert!(HamiltonianSpec::new(
            1,
            MetricFamily::Flat,
            PotentialFamily::Subquadratic { v0: 1.0 },
            1.5,
            Assumption::B
        )
        .is_err());
        assert!(HamiltonianSpec::new(3, MetricFamily::Flat, PotentialFamily::Zero, 2.0, Assumption::B).is_err());
    }

    #[test]
    fn decay_fit_flat_is_identically_zero() {
        let spec = HamiltonianSpec::flat_free(1);
        let rows = verify_assumption_decay(&spec, &[vec![0], vec![1]], &[4.0, 8.0, 16.0]).unwrap();
        assert!(rows.iter().all(|r| r.identically_zero && r.c_alpha == 0.0));
    }

    #[test]
    fn decay_fit_matches_family_exponent() {
        let radii: Vec<f64> = (2..=6).map(|k| 2.0f64.powi(k)).collect();
        let spec = bump_spec(1, 0.3, 2.0);
        let rows = verify_assumption_decay(&spec, &[vec![0]], &radii).unwrap();
        let slope = rows[0].slope.unwrap();
        assert!((slope + 2.0).abs() < 0.05, "slope {slope}");

        let spec = bump_spec(1, 0.3, 1.5);
        let rows = verify_assumption_decay(&spec, &[vec![1]], &radii).unwrap();
        let slope = rows[0].slope.unwrap();
        assert!((slope + 2.5).abs() < 0.1, "slope {slope}");
    }
}
