//! Subcommand bodies, kept separate from argument parsing so tests can call
//! them directly.

use std::time::{SystemTime, UNIX_EPOCH};

use loopspam_core::simulator::{run_trials, run_trials_sequential, TrialSet};
use loopspam_core::spamloop::{analyze_grids, verdict};
use loopspam_core::states::{horodecki_report, rho_werner, WernerParams};
use loopspam_core::tomography::{characterize, correlation_of, reconstruct, TomographyInput};

use crate::config::ScenarioConfig;
use crate::report::{CharacterizationSummary, ChshSummary, DeltaSummary, Report, ScenarioEcho, Software};

/// Execution options that do not affect results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

pub fn simulate(cfg: &ScenarioConfig, exec: Execution) -> loopspam_core::Result<TrialSet> {
    let state = rho_werner(cfg.state)?;
    let policy = cfg.cheat.policy().expect("validated at load time");
    match exec {
        Execution::Parallel => run_trials(&state, &cfg.plan, &policy),
        Execution::Sequential => run_trials_sequential(&state, &cfg.plan, &policy),
    }
}

/// Tomography on the pooled data, checked against the mean CHSH value.
pub fn characterize_trials(
    cfg: &ScenarioConfig,
    set: &TrialSet,
    observed_chsh: f64,
) -> loopspam_core::Result<CharacterizationSummary> {
    let input = TomographyInput::from_trials(&cfg.plan, set)?;
    let rec = reconstruct(&input)?;
    let c = characterize(&rec.physical, Some(observed_chsh))?;
    Ok(CharacterizationSummary::new(
        &c,
        &correlation_of(rec.physical.rho()),
        rec.clip_magnitude,
    ))
}

pub fn run_scenario(cfg: &ScenarioConfig, exec: Execution) -> loopspam_core::Result<Report> {
    let set = simulate(cfg, exec)?;
    let chsh = ChshSummary::from_trials(&set);
    let stats = analyze_grids(&set.grids())?;
    let verdict = verdict(&stats, cfg.threshold)?;
    let characterization = if cfg.tomography {
        Some(characterize_trials(cfg, &set, chsh.mean)?)
    } else {
        None
    };
    Ok(Report {
        software: Software::default(),
        generated_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seed: cfg.plan.seed,
        scenario: ScenarioEcho::from_config(cfg),
        chsh,
        delta: DeltaSummary::from(&stats),
        verdict,
        characterization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub p_s: f64,
    pub p_w: f64,
    pub m_param: f64,
    pub s_max: f64,
    pub negativity: f64,
    pub chsh_capable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub ps_min: f64,
    pub ps_max: f64,
    pub pw_min: f64,
    pub pw_max: f64,
    pub steps: usize,
}

fn linspace(lo: f64, hi: f64, steps: usize, k: usize) -> f64 {
    if steps == 1 {
        lo
    } else {
        lo + (hi - lo) * k as f64 / (steps - 1) as f64
    }
}

/// Row-major over p_s, then p_w.
pub fn sweep(range: SweepRange) -> loopspam_core::Result<Vec<SweepRow>> {
    WernerParams::new(range.ps_min, range.pw_min)?;
    WernerParams::new(range.ps_max, range.pw_max)?;
    let mut rows = Vec::with_capacity(range.steps * range.steps);
    for i in 0..range.steps {
        let p_s = linspace(range.ps_min, range.ps_max, range.steps, i);
        for j in 0..range.steps {
            let p_w = linspace(range.pw_min, range.pw_max, range.steps, j);
            let r = horodecki_report(&rho_werner(WernerParams::new(p_s, p_w)?)?);
            rows.push(SweepRow {
                p_s,
                p_w,
                m_param: r.m_param,
                s_max: r.s_max,
                negativity: r.negativity,
                chsh_capable: r.chsh_capable,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p_s,p_w,M,S_max,negativity,chsh_capable\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{},{}\n",
            r.p_s, r.p_w, r.m_param, r.s_max, r.negativity, r.chsh_capable
        );
    }
    out
}

/// Human-readable characterization of a scenario's pooled data.
pub fn characterize_text(cfg: &ScenarioConfig, c: &CharacterizationSummary) -> String {
    let mut out = String::new();
    out += &format!("state parameters   p_s = {}, p_w = {}\n", cfg.state.p_s, cfg.state.p_w);
    out += &format!("purity             {:.4}\n", c.purity);
    out += &format!(
        "best family fit    p_s = {:.4}, p_w = {:.4}, F = {:.4}{}\n",
        c.fit_p_s,
        c.fit_p_w,
        c.fit_fidelity,
        if c.fit_degenerate { " (p_s unidentifiable)" } else { "" }
    );
    out += &format!("M                  {:.4}\n", c.m_param);
    out += &format!("S_max              {:.4}\n", c.s_max);
    out += &format!("negativity         {:.4}\n", c.negativity);
    if let (Some(s), Some(b), Some(ok)) = (c.chsh_used, c.negativity_bound, c.bound_satisfied) {
        out += &format!("observed S         {s:.4}\n");
        out += &format!(
            "bound S/sqrt2 - 1  {b:.4} ({})\n",
            if ok { "consistent" } else { "VIOLATED" }
        );
    }
    out
}

/// Short summary printed next to a written report.
pub fn run_summary(r: &Report) -> String {
    let mut out = format!(
        "CHSH  {:.4} +/- {:.4} over {} trials\n",
        r.chsh.mean,
        r.chsh.std,
        r.chsh.values.len()
    );
    out += "|mean|/std of Delta - I\n";
    for row in &r.delta.ratio {
        let cells: Vec<String> = row
            .iter()
            .map(|v| v.map_or_else(|| format!("{:>9}", "inf"), |x| format!("{x:>9.3}")))
            .collect();
        out += &format!("  {}\n", cells.join(" "));
    }
    if r.delta.trials_excluded > 0 {
        out += &format!("{} trial(s) excluded: singular corner\n", r.delta.trials_excluded);
    }
    out += &format!(
        "verdict: {} (max ratio {}, threshold {})\n",
        if r.verdict.detected { "SPAM DETECTED" } else { "consistent" },
        r.delta
            .max_ratio
            .map_or_else(|| "inf".to_string(), |x| format!("{x:.3}")),
        r.verdict.threshold
    );
    out
}
