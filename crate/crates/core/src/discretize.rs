//! Position-dependent discretization of the HiPPO-LegS ODE.
//!
//! Step k advances the history window from length k to k+1 (k ≥ 1; the ODE
//! is singular at t = 0). Token 0 is absorbed exactly by
//! [`Discretizer::initial_step`] and token j ≥ 1 by step k = j, so after T
//! tokens the window is [0, T]. Under zero-order hold
//!
//! ```text
//! Ā_k = (k/(k+1))^A,   B̄_k = A⁻¹(I − Ā_k)B
//! ```
//!
//! The Euler and bilinear schemes apply the usual one-step rules to
//! A_c(t) = −A/t, B_c(t) = B/t with unit step: forward Euler at t = k,
//! backward Euler at t = k+1, bilinear at t = k.
//!
//! (k/(k+1))^A is the change of basis from the scaled Legendre basis on
//! [0, k] to the one on [0, k+1] (the history is zero-extended), so entry
//! (n, m) equals (1/(k+1))∫₀ᵏ g_m^{(k)} g_n^{(k+1)} dx. The integrand is a
//! polynomial of degree ≤ 2N−2 and an N-node Gauss rule evaluates it exactly.
//! Parlett-type substitution on the triangular A, or anything else that goes
//! through eigenvectors of A, loses all accuracy past N ≈ 20 because those
//! eigenvectors grow combinatorially.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hippo::{forward_substitute, scaled_legendre_unchecked, HippoOperator};
use crate::quadrature::gauss_legendre;
use crate::state::MemoryState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Zoh,
    #[serde(rename = "forward")]
    ForwardEuler,
    #[serde(rename = "backward")]
    BackwardEuler,
    Bilinear,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Zoh,
        Scheme::ForwardEuler,
        Scheme::BackwardEuler,
        Scheme::Bilinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Zoh => "zoh",
            Scheme::ForwardEuler => "forward",
            Scheme::BackwardEuler => "backward",
            Scheme::Bilinear => "bilinear",
        }
    }

    /// Stable tag used in bank cache headers.
    pub fn tag(self) -> u32 {
        match self {
            Scheme::Zoh => 0,
            Scheme::ForwardEuler => 1,
            Scheme::BackwardEuler => 2,
            Scheme::Bilinear => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == tag)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zoh" => Ok(Scheme::Zoh),
            "forward" | "forward-euler" => Ok(Scheme::ForwardEuler),
            "backward" | "backward-euler" => Ok(Scheme::BackwardEuler),
            "bilinear" => Ok(Scheme::Bilinear),
            other => Err(Error::invalid(
                "scheme",
                format!("unknown scheme `{other}` (zoh, forward, backward, bilinear)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStep {
    scheme: Scheme,
    step_index: usize,
    a_bar: Array2<f64>,
    b_bar: Array1<f64>,
}

impl DiscreteStep {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn a_bar(&self) -> &Array2<f64> {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &Array1<f64> {
        &self.b_bar
    }

    pub fn order(&self) -> usize {
        self.b_bar.len()
    }
}

/// Produces [`DiscreteStep`]s for one operator and scheme, reusing the
/// quadrature tables across steps.
#[derive(Debug, Clone)]
pub struct Discretizer<'a> {
    op: &'a HippoOperator,
    scheme: Scheme,
    nodes: Vec<f64>,
    /// w_q · g_m(z_q), shape (nodes × N).
    weighted_basis: Array2<f64>,
}

impl<'a> Discretizer<'a> {
    pub fn new(op: &'a HippoOperator, scheme: Scheme) -> Result<Self> {
        let (nodes, weighted_basis) = if scheme == Scheme::Zoh {
            let (nodes, weights) = gauss_legendre(op.order())?;
            let mut table = Array2::zeros((nodes.len(), op.order()));
            for (q, mut row) in table.axis_iter_mut(Axis(0)).enumerate() {
                let row = row.as_slice_mut().expect("contiguous row");
                scaled_legendre_unchecked(nodes[q], row);
                row.iter_mut().for_each(|v| *v *= weights[q]);
            }
            (nodes, table)
        } else {
            (Vec::new(), Array2::zeros((0, 0)))
        };
        Ok(Self {
            op,
            scheme,
            nodes,
            weighted_basis,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn operator(&self) -> &HippoOperator {
        self.op
    }

    pub fn step(&self, k: usize) -> Result<DiscreteStep> {
        if k == 0 {
            return Err(Error::invalid(
                "k",
                "step index starts at 1; the ODE is singular at t = 0",
            ));
        }
        self.interval(k as f64, k as f64 + 1.0, k)
    }

    /// Absorbs the very first token: the window grows from [0, 0] to [0, 1],
    /// so Ā = 0 and B̄ = A⁻¹B = e₀ (the t → 0 limit of the ZOH step, used for
    /// every scheme).
    pub fn initial_step(&self) -> DiscreteStep {
        let n = self.op.order();
        let mut b_bar = Array1::zeros(n);
        b_bar[0] = 1.0;
        DiscreteStep {
            scheme: self.scheme,
            step_index: 0,
            a_bar: Array2::zeros((n, n)),
            b_bar,
        }
    }

    /// Step that absorbs token `position` (0-based), taking the window from
    /// [0, position] to [0, position + 1].
    pub fn token_step(&self, position: usize) -> Result<DiscreteStep> {
        if position == 0 {
            Ok(self.initial_step())
        } else {
            self.step(position)
        }
    }

    /// Step that grows the window from [0, start] to [0, end] while the input
    /// is held constant; `step(k)` equals `fractional_step(k, k + 1)`.
    pub fn fractional_step(&self, start: f64, end: f64) -> Result<DiscreteStep> {
        if !(start > 0.0 && end > start && end.is_finite()) {
            return Err(Error::invalid(
                "interval",
                format!("need 0 < start < end, got [{start}, {end}]"),
            ));
        }
        self.interval(start, end, start.floor() as usize)
    }

    fn interval(&self, start: f64, end: f64, index: usize) -> Result<DiscreteStep> {
        let h = end - start;
        let (a_bar, b_bar) = match self.scheme {
            Scheme::Zoh => {
                let a_bar = self.zoh_transition(start / end)?;
                let rhs = self.op.b_vector() - &a_bar.dot(self.op.b_vector());
                let b_bar = self.op.solve_lower(&rhs);
                (a_bar, b_bar)
            }
            Scheme::ForwardEuler => {
                let a_bar = identity_minus(self.op.a_matrix(), h / start);
                let b_bar = self.op.b_vector() * (h / start);
                (a_bar, b_bar)
            }
            Scheme::BackwardEuler => {
                let scale = h / end;
                let a = self.op.a_matrix();
                let eye = Array2::eye(a.nrows());
                let a_bar = solve_shifted_columns(a, &eye, scale);
                let b_bar = forward_substitute(a, &(self.op.b_vector() * scale), scale, 1.0);
                (a_bar, b_bar)
            }
            Scheme::Bilinear => {
                let a = self.op.a_matrix();
                let half = 0.5 * h / start;
                let rhs = identity_minus(a, half);
                let a_bar = solve_shifted_columns(a, &rhs, half);
                let b_bar = forward_substitute(a, &(self.op.b_vector() * (h / start)), half, 1.0);
                (a_bar, b_bar)
            }
        };
        if a_bar.iter().chain(b_bar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                scheme: self.scheme,
                step: index,
            });
        }
        Ok(DiscreteStep {
            scheme: self.scheme,
            step_index: index,
            a_bar,
            b_bar,
        })
    }

    /// Absorbs `inputs` (one row per token, one column per channel) into
    /// `state` without forming the step matrices; O(N²·D) work per token.
    /// Agrees with repeated [`sequential_update`] over
    /// [`token_step`](Self::token_step) to roundoff.
    pub fn compress(&self, state: MemoryState, inputs: ArrayView2<'_, f64>) -> Result<MemoryState> {
        let n = self.op.order();
        if state.order() != n {
            return Err(Error::mismatch("compress order", n, state.order()));
        }
        if inputs.ncols() != state.channel_count() {
            return Err(Error::mismatch(
                "compress channels",
                state.channel_count(),
                inputs.ncols(),
            ));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("inputs", "non-finite input"));
        }
        let a = self.op.a_matrix();
        let b = self.op.b_vector();
        let start = state.tokens_absorbed();
        let mut c = state.coefficients().to_owned();
        let weighted_b = if self.scheme == Scheme::Zoh {
            self.weighted_basis.dot(b)
        } else {
            Array1::zeros(0)
        };
        let mut target = Array2::zeros((n, self.nodes.len()));
        let mut column = vec![0.0; n];
        for (offset, f) in inputs.rows().into_iter().enumerate() {
            let position = start + offset;
            let f_row = f.insert_axis(Axis(0));
            if position == 0 {
                c.fill(0.0);
                c.row_mut(0).assign(&f);
                continue;
            }
            let t = position as f64;
            c = match self.scheme {
                Scheme::Zoh => {
                    let ratio = t / (t + 1.0);
                    for (q, &z) in self.nodes.iter().enumerate() {
                        let shifted = (ratio * (z + 1.0) - 1.0).clamp(-1.0, 1.0);
                        scaled_legendre_unchecked(shifted, &mut column);
                        target.column_mut(q).assign(&ArrayView1::from(&column[..]));
                    }
                    let mut carried = target.dot(&self.weighted_basis.dot(&c));
                    carried *= 0.5 * ratio;
                    let carried_b = target.dot(&weighted_b) * (0.5 * ratio);
                    let b_bar = self.op.solve_lower(&(b - &carried_b));
                    carried + b_bar.insert_axis(Axis(1)).dot(&f_row)
                }
                Scheme::ForwardEuler => {
                    let mut next = &c - &(a.dot(&c) / t);
                    next += &(b / t).insert_axis(Axis(1)).dot(&f_row);
                    next
                }
                Scheme::BackwardEuler => {
                    let rhs = &c + &(b / (t + 1.0)).insert_axis(Axis(1)).dot(&f_row);
                    solve_shifted_columns(a, &rhs, 1.0 / (t + 1.0))
                }
                Scheme::Bilinear => {
                    let half = 0.5 / t;
                    let mut rhs = &c - &(a.dot(&c) * half);
                    rhs += &(b / t).insert_axis(Axis(1)).dot(&f_row);
                    solve_shifted_columns(a, &rhs, half)
                }
            };
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Unstable {
                    scheme: self.scheme,
                    step: position,
                });
            }
        }
        Ok(state.advance(c, 0, inputs.nrows()))
    }

    /// ratio^A for 0 < ratio ≤ 1: maps coefficients of a history on [0, s]
    /// to coefficients of its zero extension on [0, s/ratio].
    ///
    /// Only available for ZOH discretizers (the quadrature tables are built
    /// for that scheme).
    pub fn zoh_transition(&self, ratio: f64) -> Result<Array2<f64>> {
        if self.scheme != Scheme::Zoh {
            return Err(Error::invalid(
                "scheme",
                "zoh_transition needs a ZOH discretizer",
            ));
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::invalid("ratio", format!("{ratio} not in (0, 1]")));
        }
        let n = self.op.order();
        // rows: target basis on [0, s/ratio] evaluated at the source nodes
        let mut target = Array2::zeros((n, self.nodes.len()));
        let mut column = vec![0.0; n];
        for (q, &z) in self.nodes.iter().enumerate() {
            let shifted = (ratio * (z + 1.0) - 1.0).clamp(-1.0, 1.0);
            scaled_legendre_unchecked(shifted, &mut column);
            for (row, v) in column.iter().enumerate() {
                target[[row, q]] = *v;
            }
        }
        let mut out = target.dot(&self.weighted_basis);
        out *= 0.5 * ratio;
        // exact result is lower triangular; drop quadrature roundoff above the diagonal
        for row in 0..n {
            for col in (row + 1)..n {
                out[[row, col]] = 0.0;
            }
        }
        Ok(out)
    }
}

/// I − scale·A.
fn identity_minus(a: &Array2<f64>, scale: f64) -> Array2<f64> {
    let mut out = a * (-scale);
    out.diag_mut().iter_mut().for_each(|d| *d += 1.0);
    out
}

/// (I + scale·A)⁻¹·rhs column by column.
fn solve_shifted_columns(a: &Array2<f64>, rhs: &Array2<f64>, scale: f64) -> Array2<f64> {
    let mut out = Array2::zeros(rhs.raw_dim());
    for (j, col) in rhs.axis_iter(Axis(1)).enumerate() {
        let x = forward_substitute(a, &col.to_owned(), scale, 1.0);
        out.column_mut(j).assign(&x);
    }
    out
}

/// One-off discretization; prefer [`Discretizer`] when producing many steps.
pub fn discretize_step(op: &HippoOperator, k: usize, scheme: Scheme) -> Result<DiscreteStep> {
    Discretizer::new(op, scheme)?.step(k)
}

/// c_k = Ā_k·c_{k−1} + B̄_k·f_k applied to every channel.
pub fn sequential_update(
    state: MemoryState,
    input_row: ArrayView1<'_, f64>,
    step: &DiscreteStep,
) -> Result<MemoryState> {
    if state.order() != step.order() {
        return Err(Error::mismatch(
            "sequential_update order",
            step.order(),
            state.order(),
        ));
    }
    if input_row.len() != state.channel_count() {
        return Err(Error::mismatch(
            "sequential_update channels",
            state.channel_count(),
            input_row.len(),
        ));
    }
    if input_row.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input_row", "non-finite input"));
    }
    let mut next = step.a_bar.dot(&state.coefficients());
    let b = step.b_bar.view().insert_axis(Axis(1));
    let f = input_row.insert_axis(Axis(0));
    next += &b.dot(&f);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unstable {
            scheme: step.scheme,
            step: step.step_index,
        });
    }
    Ok(state.advance(next, 0, 1))
}
