//! HiPPO-LegS continuous-time operators and the scaled Legendre basis.
//!
//! The coefficient vector c(t) of the optimal degree-(N−1) approximation of
//! a history on [0, t] under the uniform measure evolves as
//!
//! ```text
//! d/dt c(t) = −(1/t)·A·c(t) + (1/t)·B·f(t)
//! ```
//!
//! with A lower triangular (diagonal n+1, below-diagonal √(2n+1)·√(2k+1))
//! and B_n = √(2n+1). The basis is g_n^{(t)}(x) = √(2n+1)·P_n(2x/t − 1).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Overshoot past ±1 that `legendre_eval` silently clamps.
pub const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HippoOperator {
    order: usize,
    a: Array2<f64>,
    b: Array1<f64>,
}

impl HippoOperator {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("order", "HiPPO order must be at least 1"));
        }
        let scale: Vec<f64> = (0..order).map(|n| ((2 * n + 1) as f64).sqrt()).collect();
        let mut a = Array2::zeros((order, order));
        for n in 0..order {
            for k in 0..n {
                a[[n, k]] = scale[n] * scale[k];
            }
            a[[n, n]] = (n + 1) as f64;
        }
        Ok(Self {
            order,
            a,
            b: Array1::from(scale),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn a_matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b_vector(&self) -> &Array1<f64> {
        &self.b
    }

    /// g_n^{(t)}(x) for a single degree, checked against the operator order.
    pub fn basis_eval(&self, n: usize, point: BasisPoint) -> Result<f64> {
        if n >= self.order {
            return Err(Error::invalid(
                "n",
                format!("degree {n} exceeds operator order {}", self.order),
            ));
        }
        basis_eval(n, point)
    }

    /// Solve A·x = rhs by forward substitution.
    pub fn solve_lower(&self, rhs: &Array1<f64>) -> Array1<f64> {
        forward_substitute(&self.a, rhs, 1.0, 0.0)
    }
}

/// Solve (diag_shift·I + scale·A)·x = rhs for lower-triangular A.
pub(crate) fn forward_substitute(
    a: &Array2<f64>,
    rhs: &Array1<f64>,
    scale: f64,
    diag_shift: f64,
) -> Array1<f64> {
    let n = a.nrows();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let mut acc = rhs[i];
        for k in 0..i {
            acc -= scale * a[[i, k]] * x[k];
        }
        x[i] = acc / (diag_shift + scale * a[[i, i]]);
    }
    x
}

/// A location inside a history window [0, t].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisPoint {
    time_horizon: f64,
    coordinate: f64,
}

impl BasisPoint {
    pub fn new(time_horizon: f64, coordinate: f64) -> Result<Self> {
        if time_horizon.is_nan() || time_horizon <= 0.0 || !time_horizon.is_finite() {
            return Err(Error::invalid(
                "time_horizon",
                format!("must be positive and finite, got {time_horizon}"),
            ));
        }
        if !(0.0..=time_horizon).contains(&coordinate) {
            return Err(Error::invalid(
                "coordinate",
                format!("{coordinate} outside [0, {time_horizon}]"),
            ));
        }
        Ok(Self {
            time_horizon,
            coordinate,
        })
    }

    pub fn time_horizon(&self) -> f64 {
        self.time_horizon
    }

    pub fn coordinate(&self) -> f64 {
        self.coordinate
    }

    /// Affine image 2x/t − 1 in [-1, 1].
    pub fn legendre_argument(&self) -> f64 {
        2.0 * self.coordinate / self.time_horizon - 1.0
    }
}

fn clamp_domain(z: f64) -> Result<f64> {
    if z.is_nan() || z.abs() > 1.0 + DOMAIN_SLACK {
        return Err(Error::OutOfDomain { value: z });
    }
    Ok(z.clamp(-1.0, 1.0))
}

/// P_n(z) by the Bonnet recurrence (n+1)P_{n+1} = (2n+1)zP_n − nP_{n−1}.
pub fn legendre_eval(degree: usize, z: f64) -> Result<f64> {
    let z = clamp_domain(z)?;
    if degree == 0 {
        return Ok(1.0);
    }
    let mut prev = 1.0;
    let mut cur = z;
    for n in 1..degree {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * z * cur - nf * prev) / (nf + 1.0);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Writes √(2n+1)·P_n(z) for n = 0..out.len() into `out`.
pub fn scaled_legendre_into(z: f64, out: &mut [f64]) -> Result<()> {
    let z = clamp_domain(z)?;
    scaled_legendre_unchecked(z, out);
    Ok(())
}

pub(crate) fn scaled_legendre_unchecked(z: f64, out: &mut [f64]) {
    let order = out.len();
    if order == 0 {
        return;
    }
    let mut prev = 1.0;
    let mut cur = z;
    out[0] = 1.0;
    if order > 1 {
        out[1] = 3f64.sqrt() * z;
    }
    for n in 1..order.saturating_sub(1) {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * z * cur - nf * prev) / (nf + 1.0);
        prev = cur;
        cur = next;
        out[n + 1] = ((2 * n + 3) as f64).sqrt() * cur;
    }
}

/// g_n^{(t)}(x) = √(2n+1)·P_n(2x/t − 1).
pub fn basis_eval(n: usize, point: BasisPoint) -> Result<f64> {
    let p = legendre_eval(n, point.legendre_argument())?;
    Ok(((2 * n + 1) as f64).sqrt() * p)
}

/// Evaluate the approximant Σ_n c_n·g_n^{(t)}(x) for every coordinate and
/// channel: returns a `points.len() × D` matrix for an `N × D` coefficient
/// matrix.
pub fn evaluate_expansion(
    coefficients: &Array2<f64>,
    time_horizon: f64,
    points: &[f64],
) -> Result<Array2<f64>> {
    let basis = basis_matrix(coefficients.nrows(), time_horizon, points)?;
    Ok(basis.dot(coefficients))
}

/// The `points.len() × order` matrix of g_n^{(t)}(x_j).
pub fn basis_matrix(order: usize, time_horizon: f64, points: &[f64]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((points.len(), order));
    for (j, &x) in points.iter().enumerate() {
        let point = BasisPoint::new(time_horizon, x)?;
        let row = out.row_mut(j);
        scaled_legendre_into(
            point.legendre_argument(),
            row.into_slice().expect("standard layout row"),
        )?;
    }
    Ok(out)
}
