//! Small shared fitting helpers (least-squares lines on log-log data).

/// Least-squares line y = slope·x + intercept.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual of the fit.
    pub max_residual: f64,
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    assert!(xs.len() == ys.len() && xs.len() >= 2, "need >= 2 points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - slope * x - intercept).abs())
        .fold(0.0f64, f64::max);
    LineFit { slope, intercept, max_residual }
}

/// Fit log|y| against log x on the last half of a ladder (the asymptotic
/// regime), skipping values below `floor`.
pub fn loglog_slope_last_half(xs: &[f64], ys: &[f64], floor: f64) -> Option<LineFit> {
    let start = xs.len() / 2;
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&x, &y) in xs[start..].iter().zip(&ys[start..]) {
        if y.abs() > floor && x > 0.0 {
            lx.push(x.ln());
            ly.push(y.abs().ln());
        }
    }
    if lx.len() < 2 {
        return None;
    }
    Some(line_fit(&lx, &ly))
}
