//! Honest and adversarial Bell-test runs with Poissonian coincidence counts.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{
    born_probabilities, observable_from_setting, OutcomeProbabilities, PolarizationObservable,
    WavePlateSetting,
};
use crate::states::TwoQubitState;

/// Settings per side.
pub const SETTINGS_PER_SIDE: usize = 4;
/// Expected coincidences per setting pair used when nothing else is configured.
pub const DEFAULT_COUNTS_PER_PAIR: u64 = 14_000;
pub const MIN_COUNTS_PER_PAIR: u64 = 100;

/// How each setting pair is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMode {
    /// Write Born-rule values directly, no sampling.
    Exact,
    /// Poisson counts with this many expected coincidences per pair.
    Expected(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsPlan {
    pub alice: [WavePlateSetting; SETTINGS_PER_SIDE],
    pub bob: [WavePlateSetting; SETTINGS_PER_SIDE],
    pub counts: CountMode,
    pub trials: usize,
    pub seed: u64,
}

impl SettingsPlan {
    pub fn new(
        alice: [WavePlateSetting; SETTINGS_PER_SIDE],
        bob: [WavePlateSetting; SETTINGS_PER_SIDE],
        counts: CountMode,
        trials: usize,
        seed: u64,
    ) -> Result<Self> {
        let plan = Self {
            alice,
            bob,
            counts,
            trials,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Standard CHSH settings with the given statistics.
    pub fn with_chsh_settings(counts: CountMode, trials: usize, seed: u64) -> Result<Self> {
        let (alice, bob) = chsh_settings();
        Self::new(alice, bob, counts, trials, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if let CountMode::Expected(n) = self.counts {
            if n < MIN_COUNTS_PER_PAIR {
                return Err(Error::InvalidPlan {
                    reason: format!("counts_per_pair must be at least {MIN_COUNTS_PER_PAIR}, got {n}"),
                });
            }
        }
        if self.trials < 2 {
            return Err(Error::InvalidPlan {
                reason: format!("need at least 2 trials, got {}", self.trials),
            });
        }
        if !self.alice.iter().chain(&self.bob).all(WavePlateSetting::is_finite) {
            return Err(Error::InvalidPlan {
                reason: "wave-plate angles must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Alice's and Bob's four (QWP, HWP) settings for the CHSH test.
pub fn chsh_settings() -> (
    [WavePlateSetting; SETTINGS_PER_SIDE],
    [WavePlateSetting; SETTINGS_PER_SIDE],
) {
    let s = WavePlateSetting::new;
    let pi_16 = FRAC_PI_8 / 2.0;
    (
        [
            s(0.0, 0.0),
            s(FRAC_PI_4, FRAC_PI_8),
            s(FRAC_PI_4, 0.0),
            s(FRAC_PI_8, pi_16),
        ],
        [
            s(FRAC_PI_8, pi_16),
            s(-FRAC_PI_8, -pi_16),
            s(FRAC_PI_4, 0.0),
            s(FRAC_PI_4, FRAC_PI_8),
        ],
    )
}

/// Bob's substitutions, keyed by (Alice setting index, Bob setting index).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheatPolicy {
    rules: BTreeMap<(usize, usize), WavePlateSetting>,
}

impl CheatPolicy {
    pub fn honest() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, alice: usize, bob: usize, replacement: WavePlateSetting) -> Result<Self> {
        if alice >= SETTINGS_PER_SIDE || bob >= SETTINGS_PER_SIDE {
            return Err(Error::InvalidRule { alice, bob });
        }
        if !replacement.is_finite() {
            return Err(Error::InvalidPlan {
                reason: format!("cheat rule ({alice}, {bob}) has a non-finite angle"),
            });
        }
        self.rules.insert((alice, bob), replacement);
        Ok(self)
    }

    pub fn rule(&self, alice: usize, bob: usize) -> Option<WavePlateSetting> {
        self.rules.get(&(alice, bob)).copied()
    }

    pub fn is_honest(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = ((usize, usize), WavePlateSetting)> + '_ {
        self.rules.iter().map(|(&k, &v)| (k, v))
    }
}

/// Bob rotates his first two settings to match Alice's Z and X choices.
pub fn aligned_cheat_policy() -> CheatPolicy {
    let s = WavePlateSetting::new;
    let rules = [
        ((0, 0), s(0.0, 0.0)),
        ((0, 1), s(0.0, 0.0)),
        ((1, 0), s(FRAC_PI_4, FRAC_PI_8)),
        ((1, 1), s(-FRAC_PI_4, -FRAC_PI_8)),
    ];
    CheatPolicy {
        rules: rules.into_iter().collect(),
    }
}

pub fn effective_setting(
    policy: &CheatPolicy,
    alice: usize,
    bob: usize,
    honest: WavePlateSetting,
) -> WavePlateSetting {
    policy.rule(alice, bob).unwrap_or(honest)
}

/// Coincidences per joint outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub n_pp: u64,
    pub n_pm: u64,
    pub n_mp: u64,
    pub n_mm: u64,
}

impl CountRecord {
    pub fn total(&self) -> u64 {
        self.n_pp + self.n_pm + self.n_mp + self.n_mm
    }

    pub fn frequencies(&self) -> Result<OutcomeProbabilities> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyRecord);
        }
        let t = total as f64;
        Ok(OutcomeProbabilities {
            p_pp: self.n_pp as f64 / t,
            p_pm: self.n_pm as f64 / t,
            p_mp: self.n_mp as f64 / t,
            p_mm: self.n_mm as f64 / t,
        })
    }
}

impl std::ops::Add for CountRecord {
    type Output = CountRecord;
    fn add(self, rhs: CountRecord) -> CountRecord {
        CountRecord {
            n_pp: self.n_pp + rhs.n_pp,
            n_pm: self.n_pm + rhs.n_pm,
            n_mp: self.n_mp + rhs.n_mp,
            n_mm: self.n_mm + rhs.n_mm,
        }
    }
}

/// What was recorded for one setting pair in one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairData {
    Counts(CountRecord),
    Exact(OutcomeProbabilities),
}

impl PairData {
    pub fn frequencies(&self) -> Result<OutcomeProbabilities> {
        match self {
            PairData::Counts(c) => c.frequencies(),
            PairData::Exact(p) => Ok(*p),
        }
    }

    pub fn estimate(&self) -> Result<f64> {
        match self {
            PairData::Counts(c) => estimate_expectation(c),
            PairData::Exact(p) => Ok(p.correlation()),
        }
    }
}

/// Draws each outcome channel independently from Poisson(n · p).
pub fn sample_counts<R: Rng + ?Sized>(probs: &OutcomeProbabilities, n_expected: u64, rng: &mut R) -> CountRecord {
    let mut draw = |p: f64| -> u64 {
        let mean = n_expected as f64 * p;
        if mean <= 0.0 {
            return 0;
        }
        let poisson = Poisson::new(mean).expect("positive finite Poisson mean");
        poisson.sample(rng) as u64
    };
    CountRecord {
        n_pp: draw(probs.p_pp),
        n_pm: draw(probs.p_pm),
        n_mp: draw(probs.p_mp),
        n_mm: draw(probs.p_mm),
    }
}

/// `(n₊₊ − n₊₋ − n₋₊ + n₋₋) / total`
pub fn estimate_expectation(c: &CountRecord) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyRecord);
    }
    let signed = (c.n_pp + c.n_mm) as f64 - (c.n_pm + c.n_mp) as f64;
    Ok(signed / total as f64)
}

/// `e[i][j]` is the correlation for Alice setting `i` and Bob setting `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationGrid(pub [[f64; SETTINGS_PER_SIDE]; SETTINGS_PER_SIDE]);

impl ExpectationGrid {
    pub fn chsh_block(&self) -> [[f64; 2]; 2] {
        let e = &self.0;
        [[e[0][0], e[0][1]], [e[1][0], e[1][1]]]
    }
}

/// `S = E₀₀ + E₀₁ + E₁₀ − E₁₁`
pub fn chsh_from_grid(e: [[f64; 2]; 2]) -> f64 {
    e[0][0] + e[0][1] + e[1][0] - e[1][1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub grid: ExpectationGrid,
    pub records: [[PairData; SETTINGS_PER_SIDE]; SETTINGS_PER_SIDE],
    pub chsh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn grids(&self) -> Vec<ExpectationGrid> {
        self.trials.iter().map(|t| t.grid).collect()
    }

    pub fn chsh_values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.chsh).collect()
    }

    /// Counts summed over all trials, per setting pair. `None` in exact mode.
    pub fn pooled_counts(&self) -> Option<[[CountRecord; SETTINGS_PER_SIDE]; SETTINGS_PER_SIDE]> {
        let mut pooled = [[CountRecord::default(); SETTINGS_PER_SIDE]; SETTINGS_PER_SIDE];
        for trial in &self.trials {
            for (i, row) in trial.records.iter().enumerate() {
                for (j, rec) in row.iter().enumerate() {
                    match rec {
                        PairData::Counts(c) => pooled[i][j] = pooled[i][j] + *c,
                        PairData::Exact(_) => return None,
                    }
                }
            }
        }
        Some(pooled)
    }
}

/// Random stream for one (trial, Alice setting, Bob setting) cell.
pub fn pair_stream(seed: u64, trial: usize, alice: usize, bob: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = (alice * SETTINGS_PER_SIDE + bob) as u64;
    rng.set_stream((trial as u64) << 8 | cell);
    rng
}

struct PreparedRun<'a> {
    state: &'a TwoQubitState,
    alice: Vec<PolarizationObservable>,
    // bob[i][j]: Bob's effective observable when Alice uses setting i
    bob: Vec<Vec<PolarizationObservable>>,
    counts: CountMode,
    seed: u64,
}

impl<'a> PreparedRun<'a> {
    fn new(state: &'a TwoQubitState, plan: &SettingsPlan, policy: &CheatPolicy) -> Result<Self> {
        plan.validate()?;
        if let Some(((i, j), _)) = policy
            .rules()
            .find(|((i, j), _)| *i >= SETTINGS_PER_SIDE || *j >= SETTINGS_PER_SIDE)
        {
            return Err(Error::InvalidRule { alice: i, bob: j });
        }
        let alice = plan.alice.iter().map(|&s| observable_from_setting(s)).collect();
        let bob = (0..SETTINGS_PER_SIDE)
            .map(|i| {
                (0..SETTINGS_PER_SIDE)
                    .map(|j| observable_from_setting(effective_setting(policy, i, j, plan.bob[j])))
                    .collect()
            })
            .collect();
        Ok(Self {
            state,
            alice,
            bob,
            counts: plan.counts,
            seed: plan.seed,
        })
    }

    fn trial(&self, index: usize) -> Result<Trial> {
        let mut grid = [[0.0; SETTINGS_PER_SIDE]; SETTINGS_PER_SIDE];
        let mut records = [[PairData::Counts(CountRecord::default()); SETTINGS_PER_SIDE]; SETTINGS_PER_SIDE];
        for i in 0..SETTINGS_PER_SIDE {
            for j in 0..SETTINGS_PER_SIDE {
                let probs = born_probabilities(self.state, &self.alice[i], &self.bob[i][j]);
                let data = match self.counts {
                    CountMode::Exact => PairData::Exact(probs),
                    CountMode::Expected(n) => {
                        let mut rng = pair_stream(self.seed, index, i, j);
                        PairData::Counts(sample_counts(&probs, n, &mut rng))
                    }
                };
                grid[i][j] = data.estimate()?;
                records[i][j] = data;
            }
        }
        let grid = ExpectationGrid(grid);
        Ok(Trial {
            chsh: chsh_from_grid(grid.chsh_block()),
            grid,
            records,
        })
    }
}

/// Runs every trial of the plan. Trials execute in parallel; the result does
/// not depend on scheduling.
pub fn run_trials(state: &TwoQubitState, plan: &SettingsPlan, policy: &CheatPolicy) -> Result<TrialSet> {
    let run = PreparedRun::new(state, plan, policy)?;
    let trials = (0..plan.trials)
        .into_par_iter()
        .map(|t| run.trial(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialSet { trials })
}

/// Single-threaded equivalent of [`run_trials`].
pub fn run_trials_sequential(
    state: &TwoQubitState,
    plan: &SettingsPlan,
    policy: &CheatPolicy,
) -> Result<TrialSet> {
    let run = PreparedRun::new(state, plan, policy)?;
    let trials = (0..plan.trials).map(|t| run.trial(t)).collect::<Result<Vec<_>>>()?;
    Ok(TrialSet { trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::expectation;
    use crate::states::{phi_plus, rho_werner, WernerParams};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn werner() -> TwoQubitState {
        rho_werner(WernerParams::new(0.928, 0.628).unwrap()).unwrap()
    }

    #[test]
    fn chsh_settings_axes() {
        let (alice, bob) = chsh_settings();
        assert_eq!(alice[0], WavePlateSetting::new(0.0, 0.0));
        assert_eq!(bob[1], WavePlateSetting::new(-FRAC_PI_8, -FRAC_PI_8 / 2.0));
        assert_eq!(alice[3], WavePlateSetting::new(FRAC_PI_8, FRAC_PI_8 / 2.0));
    }

    #[test]
    fn aligned_cheat_policy_rules() {
        let p = aligned_cheat_policy();
        assert_eq!(p.rules().count(), 4);
        assert_eq!(p.rule(0, 0), Some(WavePlateSetting::new(0.0, 0.0)));
        assert_eq!(p.rule(1, 1), Some(WavePlateSetting::new(-FRAC_PI_4, -FRAC_PI_8)));
        assert_eq!(p.rule(2, 0), None);
    }

    #[test]
    fn effective_settings() {
        let (_, bob) = chsh_settings();
        let honest = CheatPolicy::honest();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(effective_setting(&honest, i, j, bob[j]), bob[j]);
            }
        }
        let cheat = aligned_cheat_policy();
        assert_eq!(effective_setting(&cheat, 0, 1, bob[1]), WavePlateSetting::new(0.0, 0.0));
        assert_eq!(effective_setting(&cheat, 3, 3, bob[3]), bob[3]);
        assert!(matches!(
            CheatPolicy::honest().with_rule(4, 0, bob[0]),
            Err(Error::InvalidRule { alice: 4, bob: 0 })
        ));
    }

    #[test]
    fn sampling_zero_rate_and_replay() {
        let certain = OutcomeProbabilities {
            p_pp: 1.0,
            p_pm: 0.0,
            p_mp: 0.0,
            p_mm: 0.0,
        };
        let c = sample_counts(&certain, 1000, &mut pair_stream(7, 0, 0, 0));
        assert_eq!((c.n_pm, c.n_mp, c.n_mm), (0, 0, 0));
        assert!(c.n_pp > 800 && c.n_pp < 1200);

        let flat = OutcomeProbabilities {
            p_pp: 0.25,
            p_pm: 0.25,
            p_mp: 0.25,
            p_mm: 0.25,
        };
        let c = sample_counts(&flat, 1_000_000, &mut pair_stream(11, 3, 1, 2));
        for n in [c.n_pp, c.n_pm, c.n_mp, c.n_mm] {
            assert!((n as f64 - 250_000.0).abs() < 5.0 * 500.0, "{n}");
        }
        let again = sample_counts(&flat, 1_000_000, &mut pair_stream(11, 3, 1, 2));
        assert_eq!(c, again);
    }

    #[test]
    fn estimator_examples() {
        let rec = |a, b, c, d| CountRecord {
            n_pp: a,
            n_pm: b,
            n_mp: c,
            n_mm: d,
        };
        assert_eq!(estimate_expectation(&rec(500, 0, 0, 500)).unwrap(), 1.0);
        assert_eq!(estimate_expectation(&rec(250, 250, 250, 250)).unwrap(), 0.0);
        assert!((estimate_expectation(&rec(407, 93, 93, 407)).unwrap() - 0.628).abs() < 1e-12);
        assert_eq!(estimate_expectation(&rec(0, 0, 0, 0)), Err(Error::EmptyRecord));
    }

    #[test]
    fn chsh_grids() {
        let r = FRAC_1_SQRT_2;
        assert!((chsh_from_grid([[r, r], [r, -r]]) - 2.0 * SQRT_2).abs() < 1e-15);
        assert_eq!(chsh_from_grid([[0.0; 2]; 2]), 0.0);
    }

    #[test]
    fn plan_validation() {
        assert!(SettingsPlan::with_chsh_settings(CountMode::Expected(99), 10, 0).is_err());
        assert!(SettingsPlan::with_chsh_settings(CountMode::Expected(100), 1, 0).is_err());
        assert!(SettingsPlan::with_chsh_settings(CountMode::Exact, 2, 0).is_ok());
    }

    #[test]
    fn exact_mode_chsh_values() {
        let (ps, pw) = (0.928, 0.628);
        let plan = SettingsPlan::with_chsh_settings(CountMode::Exact, 2, 0).unwrap();
        let honest = run_trials(&werner(), &plan, &CheatPolicy::honest()).unwrap();
        let z = observable_from_setting(plan.alice[0]);
        let b0 = observable_from_setting(plan.bob[0]);
        assert!((honest.trials[0].grid.0[0][0] - expectation(&werner(), &z, &b0)).abs() < 1e-15);
        let expected = SQRT_2 * pw * (1.0 + ps);
        assert!((honest.trials[0].chsh - expected).abs() < 1e-12);
        assert!((expected - 1.712).abs() < 1e-3);

        let cheat = run_trials(&werner(), &plan, &aligned_cheat_policy()).unwrap();
        let expected = 2.0 * pw * (1.0 + ps);
        assert!((cheat.trials[1].chsh - expected).abs() < 1e-12);

        let bell = run_trials(&phi_plus(), &plan, &CheatPolicy::honest()).unwrap();
        assert!((bell.trials[0].chsh - 2.0 * SQRT_2).abs() < 1e-12);
        assert!(bell.pooled_counts().is_none());
    }

    #[test]
    fn parallel_matches_sequential() {
        let plan = SettingsPlan::with_chsh_settings(CountMode::Expected(5_000), 6, 99).unwrap();
        let a = run_trials(&werner(), &plan, &aligned_cheat_policy()).unwrap();
        let b = run_trials_sequential(&werner(), &plan, &aligned_cheat_policy()).unwrap();
        assert_eq!(a, b);
        let c = run_trials(&werner(), &plan, &aligned_cheat_policy()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn cheating_only_touches_ruled_pairs() {
        let plan = SettingsPlan::with_chsh_settings(CountMode::Expected(2_000), 3, 5).unwrap();
        let honest = run_trials(&werner(), &plan, &CheatPolicy::honest()).unwrap();
        let cheat = run_trials(&werner(), &plan, &aligned_cheat_policy()).unwrap();
        let policy = aligned_cheat_policy();
        for (h, c) in honest.trials.iter().zip(&cheat.trials) {
            for i in 0..4 {
                for j in 0..4 {
                    if policy.rule(i, j).is_none() {
                        assert_eq!(h.records[i][j], c.records[i][j]);
                    } else {
                        assert_ne!(h.records[i][j], c.records[i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn estimates_converge_at_high_counts() {
        let n = 1_000_000u64;
        let plan = SettingsPlan::with_chsh_settings(CountMode::Expected(n), 2, 2024).unwrap();
        let exact = SettingsPlan::with_chsh_settings(CountMode::Exact, 2, 0).unwrap();
        let sampled = run_trials(&werner(), &plan, &CheatPolicy::honest()).unwrap();
        let truth = run_trials(&werner(), &exact, &CheatPolicy::honest()).unwrap();
        let bound = 5.0 / (n as f64).sqrt();
        for t in &sampled.trials {
            for i in 0..4 {
                for j in 0..4 {
                    assert!((t.grid.0[i][j] - truth.trials[0].grid.0[i][j]).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn pooled_counts_add_up() {
        let plan = SettingsPlan::with_chsh_settings(CountMode::Expected(1_000), 3, 1).unwrap();
        let set = run_trials(&werner(), &plan, &CheatPolicy::honest()).unwrap();
        let pooled = set.pooled_counts().unwrap();
        let manual: u64 = set
            .trials
            .iter()
            .map(|t| match t.records[2][3] {
                PairData::Counts(c) => c.total(),
                PairData::Exact(_) => 0,
            })
            .sum();
        assert_eq!(pooled[2][3].total(), manual);
    }

    proptest! {
        #[test]
        fn estimator_scale_invariant(a in 0u64..10_000, b in 0u64..10_000, c in 0u64..10_000, d in 1u64..10_000, k in 1u64..50) {
            let rec = CountRecord { n_pp: a, n_pm: b, n_mp: c, n_mm: d };
            let scaled = CountRecord { n_pp: a * k, n_pm: b * k, n_mp: c * k, n_mm: d * k };
            let e1 = estimate_expectation(&rec).unwrap();
            let e2 = estimate_expectation(&scaled).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-15);
            prop_assert!((-1.0..=1.0).contains(&e1));
        }
    }
}
