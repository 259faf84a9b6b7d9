//! Density-matrix reconstruction from the 16 setting pairs, projection onto
//! physical states, and fitting to the source-plus-background family.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measurement::{observable_from_setting, PolarizationObservable};
use crate::numerics::{hermitian_eigensystem, invert3, kron, pauli, ComplexMatrix, Mat3};
use crate::simulator::{PairData, SettingsPlan, TrialSet, SETTINGS_PER_SIDE};
use crate::states::{
    fidelity, horodecki_report, negativity_lower_bound, purity, rho_werner, EntanglementReport,
    TwoQubitState, WernerParams,
};

const N: usize = SETTINGS_PER_SIDE;

/// Observables plus the data recorded for every (Alice, Bob) pair.
#[derive(Debug, Clone)]
pub struct TomographyInput {
    pub alice_obs: [PolarizationObservable; N],
    pub bob_obs: [PolarizationObservable; N],
    pub data: [[PairData; N]; N],
}

impl TomographyInput {
    /// Uses the nominal settings of the plan. In sampled mode counts are pooled
    /// over all trials; in exact mode the first trial's probabilities are used.
    pub fn from_trials(plan: &SettingsPlan, set: &TrialSet) -> Result<Self> {
        let first = set.trials.first().ok_or(Error::InsufficientTrials {
            usable: 0,
            excluded: 0,
        })?;
        let data = match set.pooled_counts() {
            Some(pooled) => pooled.map(|row| row.map(PairData::Counts)),
            None => first.records,
        };
        Ok(Self {
            alice_obs: plan.alice.map(observable_from_setting),
            bob_obs: plan.bob.map(observable_from_setting),
            data,
        })
    }
}

/// Left pseudoinverse (SᵀS)⁻¹Sᵀ of a 4×3 stack of Bloch vectors, as 3 rows of 4.
fn bloch_pseudoinverse(obs: &[PolarizationObservable; N], side: &'static str) -> Result<[[f64; N]; 3]> {
    let rows: Vec<[f64; 3]> = obs.iter().map(|o| o.bloch()).collect();
    let gram = Mat3::from_fn(|i, j| rows.iter().map(|r| r[i] * r[j]).sum());
    let gram_inv = invert3(&gram).map_err(|_| Error::DegenerateDesign { side })?;
    let mut pinv = [[0.0; N]; 3];
    for (k, row) in rows.iter().enumerate() {
        let col = gram_inv.mul_vec(*row);
        for i in 0..3 {
            pinv[i][k] = col[i];
        }
    }
    Ok(pinv)
}

/// Least-squares linear inversion. The result has unit trace and is Hermitian
/// but may have negative eigenvalues.
pub fn linear_inversion(input: &TomographyInput) -> Result<ComplexMatrix> {
    let alice_pinv = bloch_pseudoinverse(&input.alice_obs, "Alice")?;
    let bob_pinv = bloch_pseudoinverse(&input.bob_obs, "Bob")?;

    let mut corr = [[0.0; N]; N];
    let mut alice_marg = [0.0; N];
    let mut bob_marg = [0.0; N];
    for i in 0..N {
        for j in 0..N {
            let f = input.data[i][j].frequencies()?;
            corr[i][j] = f.correlation();
            alice_marg[i] += f.alice_marginal() / N as f64;
            bob_marg[j] += f.bob_marginal() / N as f64;
        }
    }

    let r: [f64; 3] = std::array::from_fn(|k| dot3_n(&alice_pinv[k], &alice_marg));
    let s: [f64; 3] = std::array::from_fn(|k| dot3_n(&bob_pinv[k], &bob_marg));
    // T = A⁺ E (B⁺)ᵀ
    let t = Mat3::from_fn(|k, l| {
        let mut acc = 0.0;
        for i in 0..N {
            for j in 0..N {
                acc += alice_pinv[k][i] * corr[i][j] * bob_pinv[l][j];
            }
        }
        acc
    });
    Ok(assemble_density(r, s, &t))
}

fn dot3_n(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ¼(I + r·σ⊗I + I⊗s·σ + Σ T_kl σ_k⊗σ_l)
pub fn assemble_density(r: [f64; 3], s: [f64; 3], t: &Mat3) -> ComplexMatrix {
    let sigma = pauli();
    let id = ComplexMatrix::identity(2);
    let mut rho = ComplexMatrix::identity(4);
    for k in 0..3 {
        rho = &rho + &kron(&sigma[k], &id).scale_real(r[k]);
        rho = &rho + &kron(&id, &sigma[k]).scale_real(s[k]);
        for l in 0..3 {
            rho = &rho + &kron(&sigma[k], &sigma[l]).scale_real(t[(k, l)]);
        }
    }
    rho.scale_real(0.25)
}

#[derive(Debug, Clone)]
pub struct ReconstructedState {
    pub raw: ComplexMatrix,
    pub physical: TwoQubitState,
    /// Total magnitude of the negative eigenvalues that were removed.
    pub clip_magnitude: f64,
}

/// Nearest-spectrum projection: clip negative eigenvalues, renormalize.
pub fn project_physical(raw: &ComplexMatrix) -> Result<(TwoQubitState, f64)> {
    let h = raw.hermitian_part();
    let eig = hermitian_eigensystem(&h)?;
    if eig.values[0] >= 0.0 {
        let tr = h.trace().re;
        return Ok((TwoQubitState::new(h.scale_real(1.0 / tr))?, 0.0));
    }
    let clip: f64 = eig.values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let kept: f64 = eig.values.iter().filter(|&&v| v > 0.0).sum();
    if !(kept > 0.0) {
        return Err(Error::InvalidState {
            reason: "reconstruction has no positive spectrum".into(),
        });
    }
    let rho = eig.reconstruct_with(|v| v.max(0.0) / kept).hermitian_part();
    Ok((TwoQubitState::new(rho)?, clip))
}

pub fn reconstruct(input: &TomographyInput) -> Result<ReconstructedState> {
    let raw = linear_inversion(input)?;
    let (physical, clip_magnitude) = project_physical(&raw)?;
    Ok(ReconstructedState {
        raw,
        physical,
        clip_magnitude,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WernerFit {
    pub params: WernerParams,
    pub fidelity: f64,
    pub frobenius_residual: f64,
    /// Set when p_w ≈ 0, where p_s has no effect on the state.
    pub degenerate: bool,
}

const FIT_GRID: usize = 101;
const FIT_RESOLUTION: f64 = 1e-7;
const DEGENERATE_PW: f64 = 1e-6;

fn werner_residual(target: &ComplexMatrix, p_s: f64, p_w: f64) -> f64 {
    let model = rho_werner(WernerParams { p_s, p_w }).expect("grid parameters lie in [0, 1]");
    (model.rho() - target).frobenius_norm()
}

/// Lexicographic ordering on (residual, p_s, p_w) so ties resolve to the
/// smallest parameters regardless of evaluation order.
fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
}

/// Least Frobenius-distance member of the family: coarse grid, then compass
/// search down to sub-1e-6 steps.
pub fn fit_werner(s: &TwoQubitState) -> Result<WernerFit> {
    let target = s.rho();
    let step = 1.0 / (FIT_GRID - 1) as f64;
    let coarse = (0..FIT_GRID)
        .into_par_iter()
        .map(|i| {
            let p_s = i as f64 * step;
            (0..FIT_GRID)
                .map(|j| {
                    let p_w = j as f64 * step;
                    (werner_residual(target, p_s, p_w), p_s, p_w)
                })
                .fold((f64::INFINITY, 0.0, 0.0), |best, c| if better(c, best) { c } else { best })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::INFINITY, 0.0, 0.0), |best, c| if better(c, best) { c } else { best });

    let (mut res, mut p_s, mut p_w) = coarse;
    let mut h = step;
    while h > FIT_RESOLUTION {
        let mut moved = false;
        for (dps, dpw) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let cs = (p_s + dps).clamp(0.0, 1.0);
            let cw = (p_w + dpw).clamp(0.0, 1.0);
            let r = werner_residual(target, cs, cw);
            if r < res {
                res = r;
                p_s = cs;
                p_w = cw;
                moved = true;
            }
        }
        if !moved {
            h *= 0.5;
        }
    }

    let params = WernerParams { p_s, p_w };
    let model = rho_werner(params)?;
    Ok(WernerFit {
        params,
        fidelity: fidelity(&model, s)?,
        frobenius_residual: res,
        degenerate: p_w < DEGENERATE_PW,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChshBound {
    pub chsh: f64,
    /// S/√2 − 1
    pub negativity_bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Characterization {
    pub purity: f64,
    pub entanglement: EntanglementReport,
    pub fit: WernerFit,
    pub bound: Option<ChshBound>,
}

/// Purity, Horodecki figures, negativity and the best family fit. When an
/// observed CHSH value is given, checks the negativity bound it implies.
pub fn characterize(s: &TwoQubitState, observed_chsh: Option<f64>) -> Result<Characterization> {
    let entanglement = horodecki_report(s);
    let bound = observed_chsh.map(|chsh| {
        let negativity_bound = negativity_lower_bound(chsh);
        ChshBound {
            chsh,
            negativity_bound,
            satisfied: entanglement.negativity >= negativity_bound,
        }
    });
    Ok(Characterization {
        purity: purity(s),
        entanglement,
        fit: fit_werner(s)?,
        bound,
    })
}

/// Correlation tensor of an arbitrary 4×4 operator, `Tr[ρ (σ_k ⊗ σ_l)]`.
pub fn correlation_of(rho: &ComplexMatrix) -> Mat3 {
    let sigma = pauli();
    Mat3::from_fn(|k, l| rho.trace_product(&kron(&sigma[k], &sigma[l])).re)
}
