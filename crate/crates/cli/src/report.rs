//! Machine-readable run reports.

use std::io;

use loopspam_core::numerics::Mat3;
use loopspam_core::simulator::{CountMode, TrialSet};
use loopspam_core::spamloop::{DeltaStats, Verdict};
use loopspam_core::tomography::Characterization;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::config::ScenarioConfig;

pub const TIMESTAMP_KEY: &str = "generated_at_unix";

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub software: Software,
    pub generated_at_unix: u64,
    pub seed: u64,
    pub scenario: ScenarioEcho,
    pub chsh: ChshSummary,
    pub delta: DeltaSummary,
    pub verdict: Verdict,
    pub characterization: Option<CharacterizationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for Software {
    fn default() -> Self {
        Self {
            name: "loopspam",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleEcho {
    pub alice: usize,
    pub bob: usize,
    pub q: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioEcho {
    pub p_s: f64,
    pub p_w: f64,
    /// Expected counts per pair, or null for exact probabilities.
    pub counts_per_pair: Option<u64>,
    pub trials: usize,
    pub alice: Vec<[f64; 2]>,
    pub bob: Vec<[f64; 2]>,
    pub cheat: &'static str,
    pub cheat_rules: Vec<RuleEcho>,
    pub threshold: f64,
}

impl ScenarioEcho {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let policy = cfg.cheat.policy().expect("validated at load time");
        Self {
            p_s: cfg.state.p_s,
            p_w: cfg.state.p_w,
            counts_per_pair: match cfg.plan.counts {
                CountMode::Exact => None,
                CountMode::Expected(n) => Some(n),
            },
            trials: cfg.plan.trials,
            alice: cfg.plan.alice.iter().map(|s| [s.q, s.h]).collect(),
            bob: cfg.plan.bob.iter().map(|s| [s.q, s.h]).collect(),
            cheat: cfg.cheat.label(),
            cheat_rules: policy
                .rules()
                .map(|((alice, bob), s)| RuleEcho {
                    alice,
                    bob,
                    q: s.q,
                    h: s.h,
                })
                .collect(),
            threshold: cfg.threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChshSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ChshSummary {
    pub fn from_trials(set: &TrialSet) -> Self {
        let values = set.chsh_values();
        let (mean, std) = mean_std(&values);
        Self { values, mean, std }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaSummary {
    pub mean: [[f64; 3]; 3],
    pub std: [[f64; 3]; 3],
    /// |mean|/std; null where the spread is zero and the mean is not.
    pub ratio: [[Option<f64>; 3]; 3],
    pub max_ratio: Option<f64>,
    pub trials_used: usize,
    pub trials_excluded: usize,
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&DeltaStats> for DeltaSummary {
    fn from(s: &DeltaStats) -> Self {
        let r = s.ratio.rows();
        Self {
            mean: *s.mean.rows(),
            std: *s.std.rows(),
            ratio: r.map(|row| row.map(finite_or_null)),
            max_ratio: finite_or_null(s.max_ratio()),
            trials_used: s.trials_used,
            trials_excluded: s.trials_excluded,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CharacterizationSummary {
    pub purity: f64,
    pub correlation: [[f64; 3]; 3],
    pub m_param: f64,
    pub s_max: f64,
    pub negativity: f64,
    pub chsh_capable: bool,
    pub fit_p_s: f64,
    pub fit_p_w: f64,
    pub fit_fidelity: f64,
    pub fit_residual: f64,
    pub fit_degenerate: bool,
    pub clip_magnitude: f64,
    pub chsh_used: Option<f64>,
    pub negativity_bound: Option<f64>,
    pub bound_satisfied: Option<bool>,
}

impl CharacterizationSummary {
    pub fn new(c: &Characterization, correlation: &Mat3, clip_magnitude: f64) -> Self {
        Self {
            purity: c.purity,
            correlation: *correlation.rows(),
            m_param: c.entanglement.m_param,
            s_max: c.entanglement.s_max,
            negativity: c.entanglement.negativity,
            chsh_capable: c.entanglement.chsh_capable,
            fit_p_s: c.fit.params.p_s,
            fit_p_w: c.fit.params.p_w,
            fit_fidelity: c.fit.fidelity,
            fit_residual: c.fit.frobenius_residual,
            fit_degenerate: c.fit.degenerate,
            clip_magnitude,
            chsh_used: c.bound.map(|b| b.chsh),
            negativity_bound: c.bound.map(|b| b.negativity_bound),
            bound_satisfied: c.bound.map(|b| b.satisfied),
        }
    }
}

/// Writes every float with 17 significant digits.
struct FixedPrecision;

impl Formatter for FixedPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Single-line JSON with fixed float precision and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedPrecision);
    value.serialize(&mut ser)?;
    let compact = String::from_utf8(buf).expect("serde_json emits UTF-8");
    Ok(compact + "\n")
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,row,col,value\n");
        for (k, v) in self.chsh.values.iter().enumerate() {
            out += &format!("chsh,{k},,{v:.16e}\n");
        }
        out += &format!("chsh_mean,,,{:.16e}\n", self.chsh.mean);
        out += &format!("chsh_std,,,{:.16e}\n", self.chsh.std);
        for (name, m) in [("delta_mean", &self.delta.mean), ("delta_std", &self.delta.std)] {
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out += &format!("{name},{i},{j},{v:.16e}\n");
                }
            }
        }
        for (i, row) in self.delta.ratio.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out += &format!("delta_ratio,{i},{j},{}\n", fmt_opt(*v));
            }
        }
        out += &format!("max_ratio,,,{}\n", fmt_opt(self.delta.max_ratio));
        out += &format!("detected,,,{}\n", self.verdict.detected);
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".into(), |x| format!("{x:.16e}"))
}

/// Drops the timestamp so two reports can be compared byte for byte.
pub fn strip_timestamp(json: &str) -> String {
    let key = format!("\"{TIMESTAMP_KEY}\":");
    match json.find(&key) {
        Some(start) => {
            let rest = &json[start + key.len()..];
            let end = rest.find(',').map_or(rest.len(), |e| e + 1);
            format!("{}{}", &json[..start], &rest[end..])
        }
        None => json.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_digits() {
        let s = to_json(&vec![0.1, 1.0, -2.5e-300]).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,1.0000000000000000e0,-2.5000000000000000e-300]\n");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0, -2.5e-300]);
    }

    #[test]
    fn timestamp_is_removed() {
        let s = r#"{"a":1,"generated_at_unix":12345,"b":2}"#;
        assert_eq!(strip_timestamp(s), r#"{"a":1,"b":2}"#);
    }
}
