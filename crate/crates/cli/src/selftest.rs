//! Quick exact-arithmetic checks runnable from the command line.

use loopspam_core::simulator::{aligned_cheat_policy, run_trials, CheatPolicy, CountMode, SettingsPlan};
use loopspam_core::spamloop::grid_delta;
use loopspam_core::states::{horodecki_report, rho_werner, WernerParams};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn exact_trial(params: WernerParams, policy: &CheatPolicy) -> loopspam_core::Result<(f64, f64)> {
    let plan = SettingsPlan::with_chsh_settings(CountMode::Exact, 2, 0)?;
    let set = run_trials(&rho_werner(params)?, &plan, policy)?;
    let t = &set.trials[0];
    let dev = (grid_delta(&t.grid)? - loopspam_core::numerics::Mat3::IDENTITY).max_abs();
    Ok((t.chsh, dev))
}

pub fn run() -> loopspam_core::Result<Vec<Check>> {
    let lab = WernerParams::new(0.928, 0.628)?;
    let (p_w, p_s) = (lab.p_w, lab.p_s);
    let mut checks = Vec::new();

    let (s, dev) = exact_trial(lab, &CheatPolicy::honest())?;
    let expected = std::f64::consts::SQRT_2 * p_w * (1.0 + p_s);
    checks.push(Check {
        name: "honest CHSH",
        passed: (s - expected).abs() < 1e-12,
        detail: format!("S = {s:.12}, expected {expected:.12}"),
    });
    checks.push(Check {
        name: "honest loop identity",
        passed: dev < 1e-12,
        detail: format!("max|Delta - I| = {dev:.3e}"),
    });

    let (s, dev) = exact_trial(lab, &aligned_cheat_policy())?;
    let expected = 2.0 * p_w * (1.0 + p_s);
    checks.push(Check {
        name: "cheat CHSH",
        passed: (s - expected).abs() < 1e-12,
        detail: format!("S = {s:.12}, expected {expected:.12}"),
    });
    checks.push(Check {
        name: "cheat loop deviation",
        passed: (dev - 0.277_660_293_898_480_35).abs() < 1e-9,
        detail: format!("max|Delta - I| = {dev:.12}"),
    });

    let r = horodecki_report(&rho_werner(lab)?);
    let m = p_w * p_w * (1.0 + p_s * p_s);
    checks.push(Check {
        name: "lab state M",
        passed: (r.m_param - m).abs() < 1e-9 && !r.chsh_capable,
        detail: format!("M = {:.9}, capable = {}", r.m_param, r.chsh_capable),
    });
    let n = 2.0 * (p_w * p_s / 2.0 - (1.0 - p_w) / 4.0).max(0.0);
    checks.push(Check {
        name: "lab state negativity",
        passed: (r.negativity - n).abs() < 1e-9,
        detail: format!("N = {:.9}, expected {n:.9}", r.negativity),
    });

    let bell = horodecki_report(&rho_werner(WernerParams::new(0.866, 1.0)?)?);
    checks.push(Check {
        name: "high-coherence state",
        passed: bell.chsh_capable && (bell.m_param - (1.0 + 0.866f64.powi(2))).abs() < 1e-9,
        detail: format!("M = {:.6}, S_max = {:.6}", bell.m_param, bell.s_max),
    });
    Ok(checks)
}
