//! Two-qubit polarization states and their entanglement figures.
//!
//! Basis order is HH, HV, VH, VV. Pauli indices run (x, y, z).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dot3, hermitian_eigensystem, kron, norm3, partial_transpose_b, pauli, psd_sqrt, ComplexMatrix,
    Mat3,
};

const STATE_TOL: f64 = 1e-10;
const MIN_EIGENVALUE_TOL: f64 = 1e-9;
/// Partial-transpose eigenvalues above `-NEGATIVITY_CLIP` count as zero.
const NEGATIVITY_CLIP: f64 = 1e-12;

/// A validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: ComplexMatrix,
}

impl TwoQubitState {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(rho: ComplexMatrix) -> Result<Self> {
        if rho.dim() != 4 {
            return Err(Error::InvalidState {
                reason: format!("expected a 4x4 matrix, got {0}x{0}", rho.dim()),
            });
        }
        if !rho.is_finite() {
            return Err(Error::InvalidState {
                reason: "non-finite entries".into(),
            });
        }
        let defect = rho.hermiticity_defect();
        if defect > STATE_TOL {
            return Err(Error::InvalidState {
                reason: format!("not Hermitian (defect {defect:e})"),
            });
        }
        let trace = rho.trace();
        if (trace - Complex64::new(1.0, 0.0)).norm() > STATE_TOL {
            return Err(Error::InvalidState {
                reason: format!("trace is {} instead of 1", trace.re),
            });
        }
        let min = hermitian_eigensystem(&rho)?.values[0];
        if min < -MIN_EIGENVALUE_TOL {
            return Err(Error::InvalidState {
                reason: format!("negative eigenvalue {min:e}"),
            });
        }
        Ok(Self { rho })
    }

    /// Pure state from a (not necessarily normalized) amplitude vector.
    pub fn pure(amplitudes: [Complex64; 4]) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidState {
                reason: "zero state vector".into(),
            });
        }
        let v: Vec<Complex64> = amplitudes.iter().map(|z| z / norm).collect();
        Self::new(ComplexMatrix::projector(&v))
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: ComplexMatrix::identity(4).scale_real(0.25),
        }
    }

    pub fn rho(&self) -> &ComplexMatrix {
        &self.rho
    }

    /// Convex combination `Σ wᵢ ρᵢ` with weights normalized to 1.
    pub fn mixture(parts: &[(f64, &TwoQubitState)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || !(total > 0.0) {
            return Err(Error::InvalidState {
                reason: "mixture weights must be non-negative with positive sum".into(),
            });
        }
        let mut rho = ComplexMatrix::zeros(4);
        for (w, s) in parts {
            rho = &rho + &s.rho.scale_real(w / total);
        }
        Self::new(rho)
    }
}

/// Parameters of the source-plus-background state family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WernerParams {
    /// Weight of the coherent Bell component in the source state.
    pub p_s: f64,
    /// Weight of the source state against unpolarized background.
    pub p_w: f64,
}

impl WernerParams {
    pub fn new(p_s: f64, p_w: f64) -> Result<Self> {
        check_probability(p_s)?;
        check_probability(p_w)?;
        Ok(Self { p_s, p_w })
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { value: p })
    }
}

/// Correlation tensor `T_ij = Tr[ρ (σ_i ⊗ σ_j)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationMatrix(pub Mat3);

impl CorrelationMatrix {
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntanglementReport {
    pub purity: f64,
    /// Sum of the two largest eigenvalues of TᵀT.
    pub m_param: f64,
    pub s_max: f64,
    pub negativity: f64,
    pub chsh_capable: bool,
}

/// (|HH⟩ + |VV⟩)/√2
pub fn phi_plus() -> TwoQubitState {
    let mut rho = ComplexMatrix::zeros(4);
    for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        rho[(i, j)] = Complex64::new(0.5, 0.0);
    }
    TwoQubitState { rho }
}

/// Bell state with probability `p`, otherwise an incoherent HH/VV mixture.
pub fn rho_source(p: f64) -> Result<TwoQubitState> {
    check_probability(p)?;
    let mut rho = phi_plus().rho.scale_real(p);
    let incoherent = (1.0 - p) / 2.0;
    rho[(0, 0)] += incoherent;
    rho[(3, 3)] += incoherent;
    Ok(TwoQubitState { rho })
}

/// Source state diluted with unpolarized background.
pub fn rho_werner(params: WernerParams) -> Result<TwoQubitState> {
    check_probability(params.p_w)?;
    let source = rho_source(params.p_s)?;
    let background = ComplexMatrix::identity(4).scale_real((1.0 - params.p_w) / 4.0);
    Ok(TwoQubitState {
        rho: &source.rho.scale_real(params.p_w) + &background,
    })
}

pub fn purity(s: &TwoQubitState) -> f64 {
    s.rho.trace_product(&s.rho).re
}

pub fn correlation_matrix(s: &TwoQubitState) -> CorrelationMatrix {
    let sigma = pauli();
    let t = Mat3::from_fn(|i, j| s.rho.trace_product(&kron(&sigma[i], &sigma[j])).re);
    CorrelationMatrix(t)
}

/// Local Bloch vectors (r, s) with `r_i = Tr[ρ (σ_i ⊗ I)]`, `s_j = Tr[ρ (I ⊗ σ_j)]`.
pub fn local_bloch_vectors(s: &TwoQubitState) -> ([f64; 3], [f64; 3]) {
    let sigma = pauli();
    let id = ComplexMatrix::identity(2);
    let r = std::array::from_fn(|i| s.rho.trace_product(&kron(&sigma[i], &id)).re);
    let t = std::array::from_fn(|j| s.rho.trace_product(&kron(&id, &sigma[j])).re);
    (r, t)
}

/// Sum of the two largest eigenvalues of TᵀT.
pub fn horodecki_m(t: &CorrelationMatrix) -> f64 {
    let u = t.0.transpose() * t.0;
    let mut h = ComplexMatrix::zeros(3);
    for i in 0..3 {
        for j in 0..3 {
            // symmetrize to kill round-off asymmetry
            h[(i, j)] = Complex64::new(0.5 * (u[(i, j)] + u[(j, i)]), 0.0);
        }
    }
    let values = hermitian_eigensystem(&h)
        .expect("symmetrized TᵀT is Hermitian")
        .values;
    (values[1] + values[2]).max(0.0)
}

/// `2 Σ max(0, −λ)` over the spectrum of the partial transpose.
pub fn negativity(s: &TwoQubitState) -> f64 {
    let pt = partial_transpose_b(&s.rho);
    let values = hermitian_eigensystem(&pt)
        .expect("partial transpose of a Hermitian matrix is Hermitian")
        .values;
    2.0 * values
        .iter()
        .filter(|&&l| l < -NEGATIVITY_CLIP)
        .map(|&l| -l)
        .sum::<f64>()
}

pub fn horodecki_report(s: &TwoQubitState) -> EntanglementReport {
    let m_param = horodecki_m(&correlation_matrix(s));
    EntanglementReport {
        purity: purity(s),
        m_param,
        s_max: 2.0 * m_param.sqrt(),
        negativity: negativity(s),
        chsh_capable: m_param > 1.0,
    }
}

/// Closed-form M for the two-parameter family.
pub fn m_from_params(params: WernerParams) -> f64 {
    let pw2 = params.p_w * params.p_w;
    pw2 + params.p_s * params.p_s * pw2
}

/// Uhlmann fidelity `(Tr √(√a b √a))²`.
pub fn fidelity(a: &TwoQubitState, b: &TwoQubitState) -> Result<f64> {
    let root_a = psd_sqrt(&a.rho)?;
    let inner = &(&root_a * &b.rho) * &root_a;
    let root = psd_sqrt(&inner.hermitian_part())?;
    let tr = root.trace().re;
    Ok(tr * tr)
}

/// Lower bound on negativity implied by an observed CHSH value.
pub fn negativity_lower_bound(s_value: f64) -> f64 {
    s_value / std::f64::consts::SQRT_2 - 1.0
}

/// Optimal CHSH value and the Bloch vectors that reach it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshOptimum {
    pub value: f64,
    /// Alice's two measurement directions (a, a′).
    pub alice: [[f64; 3]; 2],
    /// Bob's two measurement directions (b, b′).
    pub bob: [[f64; 3]; 2],
}

const CHSH_RESTARTS: usize = 5;
const CHSH_MAX_SWEEPS: usize = 100_000;
const CHSH_SEED: u64 = 0x0c45_5eed;

fn chsh_value(t: &Mat3, a: [f64; 3], a2: [f64; 3], b: [f64; 3], b2: [f64; 3]) -> f64 {
    let sum = t.mul_vec(std::array::from_fn(|k| b[k] + b2[k]));
    let diff = t.mul_vec(std::array::from_fn(|k| b[k] - b2[k]));
    dot3(a, sum) + dot3(a2, diff)
}

/// Unit vector along `v`, or `fallback` when `v` vanishes.
fn unit_or(v: [f64; 3], fallback: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    if n > 1e-300 {
        v.map(|x| x / n)
    } else {
        fallback
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = norm3(v);
        if n > 1e-3 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

/// Maximizes `S = a·T(b+b′) + a′·T(b−b′)` over unit vectors by alternating
/// exact partial maximizations, keeping the best of several random starts.
pub fn maximize_chsh(s: &TwoQubitState) -> ChshOptimum {
    let t = correlation_matrix(s).0;
    let tt = t.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(CHSH_SEED);
    let mut best: Option<ChshOptimum> = None;

    for _ in 0..CHSH_RESTARTS {
        let mut b = random_unit(&mut rng);
        let mut b2 = random_unit(&mut rng);
        let mut a = random_unit(&mut rng);
        let mut a2 = random_unit(&mut rng);
        let mut value = chsh_value(&t, a, a2, b, b2);
        for _ in 0..CHSH_MAX_SWEEPS {
            a = unit_or(t.mul_vec(std::array::from_fn(|k| b[k] + b2[k])), a);
            a2 = unit_or(t.mul_vec(std::array::from_fn(|k| b[k] - b2[k])), a2);
            b = unit_or(tt.mul_vec(std::array::from_fn(|k| a[k] + a2[k])), b);
            b2 = unit_or(tt.mul_vec(std::array::from_fn(|k| a[k] - a2[k])), b2);
            let next = chsh_value(&t, a, a2, b, b2);
            let improvement = next - value;
            value = next;
            if improvement < 1e-10 {
                break;
            }
        }
        let candidate = ChshOptimum {
            value: value.max(0.0),
            alice: [a, a2],
            bob: [b, b2],
        };
        if best.is_none_or(|cur| candidate.value > cur.value) {
            best = Some(candidate);
        }
    }
    best.expect("at least one restart")
}
