//! Wave-plate settings, polarization observables and Born-rule statistics.
//!
//! A photon passes a quarter-wave plate, then a half-wave plate, then a
//! polarizing beam splitter whose transmitted (H) port is outcome +1.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numerics::{kron, pauli, ComplexMatrix};
use crate::states::TwoQubitState;

const PROB_CLIP: f64 = 1e-12;

/// Quarter- and half-wave plate fast-axis angles, in radians from horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePlateSetting {
    pub q: f64,
    pub h: f64,
}

impl WavePlateSetting {
    pub const fn new(q: f64, h: f64) -> Self {
        Self { q, h }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.h.is_finite()
    }

    /// Same physical setting with both angles folded into (−π/2, π/2].
    pub fn canonical(&self) -> Self {
        Self {
            q: fold_half_turn(self.q),
            h: fold_half_turn(self.h),
        }
    }
}

fn fold_half_turn(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut t = theta.rem_euclid(pi);
    if t > FRAC_PI_2 {
        t -= pi;
    }
    t
}

fn rotation(theta: f64) -> ComplexMatrix {
    let (s, c) = theta.sin_cos();
    ComplexMatrix::from_rows(
        2,
        vec![
            Complex64::new(c, 0.0),
            Complex64::new(-s, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(c, 0.0),
        ],
    )
}

fn retarder(theta: f64, slow_axis_phase: Complex64) -> ComplexMatrix {
    let mut d = ComplexMatrix::identity(2);
    d[(1, 1)] = slow_axis_phase;
    &(&rotation(theta) * &d) * &rotation(-theta)
}

/// Jones matrix of a quarter-wave plate with its fast axis at `theta`.
pub fn qwp_jones(theta: f64) -> ComplexMatrix {
    retarder(theta, Complex64::i())
}

/// Jones matrix of a half-wave plate with its fast axis at `theta`.
pub fn hwp_jones(theta: f64) -> ComplexMatrix {
    retarder(theta, Complex64::new(-1.0, 0.0))
}

/// A two-outcome polarization measurement `op = bloch · σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationObservable {
    op: ComplexMatrix,
    bloch: [f64; 3],
}

impl PolarizationObservable {
    /// Observable along a Bloch direction. The vector is normalized.
    pub fn from_bloch(direction: [f64; 3]) -> Self {
        let n = crate::numerics::norm3(direction);
        assert!(n > 0.0, "Bloch direction must be non-zero");
        let bloch = direction.map(|x| x / n);
        let sigma = pauli();
        let mut op = ComplexMatrix::zeros(2);
        for (k, s) in sigma.iter().enumerate() {
            op = &op + &s.scale_real(bloch[k]);
        }
        Self { op, bloch }
    }

    fn from_operator(op: ComplexMatrix) -> Self {
        let sigma = pauli();
        let bloch = std::array::from_fn(|k| 0.5 * op.trace_product(&sigma[k]).re);
        Self { op, bloch }
    }

    pub fn op(&self) -> &ComplexMatrix {
        &self.op
    }

    pub fn bloch(&self) -> [f64; 3] {
        self.bloch
    }

    /// Spectral projector (I ± op)/2 for outcome ±1.
    pub fn projector(&self, outcome_plus: bool) -> ComplexMatrix {
        let sign = if outcome_plus { 1.0 } else { -1.0 };
        (&ComplexMatrix::identity(2) + &self.op.scale_real(sign)).scale_real(0.5)
    }
}

/// Observable measured with the given wave-plate setting: `W† σ_z W` with
/// `W = HWP(h) · QWP(q)`.
pub fn observable_from_setting(s: WavePlateSetting) -> PolarizationObservable {
    let w = &hwp_jones(s.h) * &qwp_jones(s.q);
    let [_, _, sz] = pauli();
    let op = &(&w.adjoint() * &sz) * &w;
    PolarizationObservable::from_operator(op.hermitian_part())
}

/// Joint probabilities for outcomes (+,+), (+,−), (−,+), (−,−).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub p_pp: f64,
    pub p_pm: f64,
    pub p_mp: f64,
    pub p_mm: f64,
}

impl OutcomeProbabilities {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_pp, self.p_pm, self.p_mp, self.p_mm]
    }

    pub fn correlation(&self) -> f64 {
        self.p_pp - self.p_pm - self.p_mp + self.p_mm
    }

    /// Probability that Alice sees +1 minus probability of −1.
    pub fn alice_marginal(&self) -> f64 {
        self.p_pp + self.p_pm - self.p_mp - self.p_mm
    }

    pub fn bob_marginal(&self) -> f64 {
        self.p_pp - self.p_pm + self.p_mp - self.p_mm
    }
}

fn clip_probability(p: f64) -> f64 {
    if (-PROB_CLIP..0.0).contains(&p) {
        0.0
    } else if p > 1.0 && p <= 1.0 + PROB_CLIP {
        1.0
    } else {
        p
    }
}

pub fn born_probabilities(
    s: &TwoQubitState,
    a: &PolarizationObservable,
    b: &PolarizationObservable,
) -> OutcomeProbabilities {
    let p = |alpha: bool, beta: bool| {
        let proj = kron(&a.projector(alpha), &b.projector(beta));
        clip_probability(s.rho().trace_product(&proj).re)
    };
    OutcomeProbabilities {
        p_pp: p(true, true),
        p_pm: p(true, false),
        p_mp: p(false, true),
        p_mm: p(false, false),
    }
}

/// `Tr[ρ (A ⊗ B)]`
pub fn expectation(s: &TwoQubitState, a: &PolarizationObservable, b: &PolarizationObservable) -> f64 {
    s.rho().trace_product(&kron(&a.op, &b.op)).re
}
