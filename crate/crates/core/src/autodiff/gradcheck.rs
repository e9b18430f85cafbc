//! Central finite-difference checks for analytic gradients.

/// Step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance of the gradient checks.
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute differences at or below this count as agreement.
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over components whose absolute error exceeds
    /// the floor; 0 when every component is within the floor.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_REL_TOL
    }
}

/// Error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= FD_ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Compares `analytic[i]` against `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` for the
/// listed components (all when `components` is `None`).
pub fn check_gradient(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    components: Option<&[usize]>,
) -> GradCheck {
    let all: Vec<usize> = (0..x.len()).collect();
    let comps = components.unwrap_or(&all);
    let mut worst = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    let mut buf = x.to_vec();
    for &i in comps {
        buf[i] = x[i] + FD_STEP;
        let fp = f(&buf);
        buf[i] = x[i] - FD_STEP;
        let fm = f(&buf);
        buf[i] = x[i];
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let e = relative_error(analytic[i], numeric);
        if e > worst.max_rel_error || (i == comps[0] && worst.max_rel_error == 0.0) {
            worst = GradCheck { max_rel_error: e, worst_index: i, analytic: analytic[i], numeric };
        }
    }
    worst
}

/// Whether `f` looks differentiable at `x` on the scale of [`FD_STEP`]:
/// central differences with steps `h` and `h/10` agree for every listed
/// component. Piecewise-smooth objectives (distance fields, hinges) fail
/// this when a kink lies within one step, where no finite-difference
/// comparison is meaningful.
pub fn locally_smooth(f: impl Fn(&[f64]) -> f64, x: &[f64], components: Option<&[usize]>) -> bool {
    let all: Vec<usize> = (0..x.len()).collect();
    let comps = components.unwrap_or(&all);
    let mut buf = x.to_vec();
    let mut central = |i: usize, h: f64| {
        buf[i] = x[i] + h;
        let fp = f(&buf);
        buf[i] = x[i] - h;
        let fm = f(&buf);
        buf[i] = x[i];
        (fp - fm) / (2.0 * h)
    };
    comps.iter().all(|&i| {
        let coarse = central(i, FD_STEP);
        let fine = central(i, FD_STEP / 10.0);
        relative_error(coarse, fine) < FD_REL_TOL / 2.0
    })
}
