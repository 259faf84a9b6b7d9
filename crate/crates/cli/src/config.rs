//! Scenario configuration files.
//!
//! The format is TOML. Angles are radians and may be written as numbers or
//! as strings such as `"pi/8"`, `"-3*pi/16"` or `"0.125"`.

use std::fmt;
use std::path::{Path, PathBuf};

use loopspam_core::measurement::WavePlateSetting;
use loopspam_core::simulator::{
    aligned_cheat_policy, chsh_settings, CheatPolicy, CountMode, SettingsPlan, DEFAULT_COUNTS_PER_PAIR,
    SETTINGS_PER_SIDE,
};
use loopspam_core::spamloop::DEFAULT_THRESHOLD;
use loopspam_core::states::WernerParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// An angle as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AngleSpec {
    Radians(f64),
    Expr(String),
}

impl AngleSpec {
    pub fn radians(&self) -> Result<f64, String> {
        match self {
            AngleSpec::Radians(v) => Ok(*v),
            AngleSpec::Expr(s) => parse_angle(s),
        }
    }
}

/// Parses `[sign][coef][*]pi[/den]` or a plain number.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let err = || format!("cannot parse angle {text:?}; expected e.g. \"pi/8\", \"-3*pi/16\" or a number");
    if let Ok(v) = s.parse::<f64>() {
        return if v.is_finite() { Ok(v) } else { Err(err()) };
    }
    let lower = s.to_ascii_lowercase();
    let (sign, body) = match lower.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, lower.strip_prefix('+').unwrap_or(&lower)),
    };
    let pos = body.find("pi").ok_or_else(err)?;
    let coef_text = body[..pos].trim_end_matches('*');
    let coef = if coef_text.is_empty() {
        1.0
    } else {
        coef_text.parse::<f64>().map_err(|_| err())?
    };
    let rest = &body[pos + 2..];
    let den = if rest.is_empty() {
        1.0
    } else {
        rest.strip_prefix('/')
            .ok_or_else(err)?
            .parse::<f64>()
            .map_err(|_| err())?
    };
    if den == 0.0 || !coef.is_finite() || !den.is_finite() {
        return Err(err());
    }
    Ok(sign * coef * std::f64::consts::PI / den)
}

/// `counts_per_pair` accepts an integer or the string `"exact"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CountsSpec {
    Expected(u64),
    Keyword(String),
}

impl CountsSpec {
    pub fn mode(&self) -> Result<CountMode, String> {
        match self {
            CountsSpec::Expected(n) => Ok(CountMode::Expected(*n)),
            CountsSpec::Keyword(k) if k.eq_ignore_ascii_case("exact") => Ok(CountMode::Exact),
            CountsSpec::Keyword(k) => k
                .parse::<u64>()
                .map(CountMode::Expected)
                .map_err(|_| format!("expected an integer or \"exact\", got {k:?}")),
        }
    }
}

impl Default for CountsSpec {
    fn default() -> Self {
        CountsSpec::Expected(DEFAULT_COUNTS_PER_PAIR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    pub p_s: f64,
    pub p_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(default)]
    pub counts_per_pair: CountsSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub alice: Option<Vec<[AngleSpec; 2]>>,
    pub bob: Option<Vec<[AngleSpec; 2]>>,
}

fn default_trials() -> usize {
    10
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            counts_per_pair: CountsSpec::default(),
            trials: default_trials(),
            seed: 0,
            alice: None,
            bob: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub alice: usize,
    pub bob: usize,
    pub setting: [AngleSpec; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheatSection {
    /// "none", "paper" or "rules".
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

fn default_policy() -> String {
    "none".into()
}

impl Default for CheatSection {
    fn default() -> Self {
        Self {
            policy: default_policy(),
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TomographySection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub state: StateSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub cheat: CheatSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub tomography: TomographySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Cheat selection after resolution.
#[derive(Debug, Clone, PartialEq)]
pub enum CheatChoice {
    None,
    Aligned,
    Rules(Vec<(usize, usize, WavePlateSetting)>),
}

impl CheatChoice {
    pub fn label(&self) -> &'static str {
        match self {
            CheatChoice::None => "none",
            CheatChoice::Aligned => "paper",
            CheatChoice::Rules(_) => "rules",
        }
    }

    pub fn policy(&self) -> Result<CheatPolicy, ConfigError> {
        match self {
            CheatChoice::None => Ok(CheatPolicy::honest()),
            CheatChoice::Aligned => Ok(aligned_cheat_policy()),
            CheatChoice::Rules(rules) => rules.iter().try_fold(CheatPolicy::honest(), |p, &(a, b, s)| {
                p.with_rule(a, b, s)
                    .map_err(|e| ConfigError::field("cheat.rules", e.to_string()))
            }),
        }
    }
}

/// Validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub state: WernerParams,
    pub plan: SettingsPlan,
    pub cheat: CheatChoice,
    pub threshold: f64,
    pub tomography: bool,
    pub report: Option<PathBuf>,
    pub format: OutputFormat,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        })
    }
}

fn settings_list(field: &str, list: &Option<Vec<[AngleSpec; 2]>>, default: [WavePlateSetting; SETTINGS_PER_SIDE]) -> Result<[WavePlateSetting; SETTINGS_PER_SIDE], ConfigError> {
    let Some(list) = list else {
        return Ok(default);
    };
    if list.len() != SETTINGS_PER_SIDE {
        return Err(ConfigError::field(
            field,
            format!("expected {SETTINGS_PER_SIDE} settings, got {}", list.len()),
        ));
    }
    let mut out = default;
    for (k, pair) in list.iter().enumerate() {
        out[k] = setting(&format!("{field}[{k}]"), pair)?;
    }
    Ok(out)
}

fn setting(field: &str, pair: &[AngleSpec; 2]) -> Result<WavePlateSetting, ConfigError> {
    let q = pair[0].radians().map_err(|m| ConfigError::field(field, m))?;
    let h = pair[1].radians().map_err(|m| ConfigError::field(field, m))?;
    Ok(WavePlateSetting::new(q, h))
}

/// Parses the `--cheat` argument or `cheat.policy` value. Anything other than
/// `none`/`paper` is read as a path to a TOML file with `[[rules]]` entries.
pub fn cheat_from_arg(arg: &str) -> Result<CheatChoice, ConfigError> {
    match arg {
        "none" => Ok(CheatChoice::None),
        "paper" => Ok(CheatChoice::Aligned),
        path => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct RuleFile {
                rules: Vec<RuleSpec>,
            }
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.into(),
                source,
            })?;
            let file: RuleFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.into(),
                message: e.to_string(),
            })?;
            resolve_rules(&file.rules).map(CheatChoice::Rules)
        }
    }
}

fn resolve_rules(rules: &[RuleSpec]) -> Result<Vec<(usize, usize, WavePlateSetting)>, ConfigError> {
    rules
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let field = format!("cheat.rules[{k}]");
            if r.alice >= SETTINGS_PER_SIDE || r.bob >= SETTINGS_PER_SIDE {
                return Err(ConfigError::field(
                    field,
                    format!("setting indices must be below {SETTINGS_PER_SIDE}"),
                ));
            }
            Ok((r.alice, r.bob, setting(&field, &r.setting)?))
        })
        .collect()
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn resolve(&self) -> Result<ScenarioConfig, ConfigError> {
        let state = WernerParams::new(self.state.p_s, self.state.p_w)
            .map_err(|e| ConfigError::field("state", e.to_string()))?;
        let (alice_default, bob_default) = chsh_settings();
        let alice = settings_list("plan.alice", &self.plan.alice, alice_default)?;
        let bob = settings_list("plan.bob", &self.plan.bob, bob_default)?;
        let counts = self
            .plan
            .counts_per_pair
            .mode()
            .map_err(|m| ConfigError::field("plan.counts_per_pair", m))?;
        let plan = SettingsPlan::new(alice, bob, counts, self.plan.trials, self.plan.seed)
            .map_err(|e| ConfigError::field("plan", e.to_string()))?;

        let cheat = match self.cheat.policy.as_str() {
            "none" | "paper" if !self.cheat.rules.is_empty() => {
                return Err(ConfigError::field(
                    "cheat.rules",
                    "rules are only allowed with policy = \"rules\"",
                ))
            }
            "none" => CheatChoice::None,
            "paper" => CheatChoice::Aligned,
            "rules" => CheatChoice::Rules(resolve_rules(&self.cheat.rules)?),
            other => {
                return Err(ConfigError::field(
                    "cheat.policy",
                    format!("expected \"none\", \"paper\" or \"rules\", got {other:?}"),
                ))
            }
        };
        cheat.policy()?;

        let threshold = self.detection.threshold;
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(ConfigError::field(
                "detection.threshold",
                format!("must be a positive number, got {threshold}"),
            ));
        }
        Ok(ScenarioConfig {
            state,
            plan,
            cheat,
            threshold,
            tomography: self.tomography.enabled,
            report: self.output.report.clone(),
            format: self.output.format,
        })
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        RawConfig::load(path)?.resolve()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angle_expressions() {
        assert_eq!(parse_angle("pi/8").unwrap(), PI / 8.0);
        assert_eq!(parse_angle("-pi/16").unwrap(), -PI / 16.0);
        assert_eq!(parse_angle("3*pi/8").unwrap(), 3.0 * PI / 8.0);
        assert_eq!(parse_angle("3pi/8").unwrap(), 3.0 * PI / 8.0);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle(" 0 ").unwrap(), 0.0);
        assert_eq!(parse_angle("0.25").unwrap(), 0.25);
        assert!(parse_angle("pi/0").is_err());
        assert!(parse_angle("tau/4").is_err());
        assert!(parse_angle("pi*8").is_err());
        assert!(parse_angle("inf").is_err());
    }

    const HONEST: &str = r#"
        [state]
        p_s = 0.928
        p_w = 0.628

        [plan]
        counts_per_pair = 14000
        trials = 10
        seed = 7

        [cheat]
        policy = "none"
    "#;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = RawConfig::parse(HONEST, "test").unwrap().resolve().unwrap();
        assert_eq!(cfg.plan.counts, CountMode::Expected(14_000));
        assert_eq!(cfg.plan.alice, chsh_settings().0);
        assert_eq!(cfg.cheat, CheatChoice::None);
        assert_eq!(cfg.threshold, 5.0);
        assert!(cfg.tomography);
        assert_eq!(cfg.format, OutputFormat::Json);
    }

    #[test]
    fn explicit_settings_and_rules() {
        let text = r#"
            [state]
            p_s = 1.0
            p_w = 1.0
            [plan]
            counts_per_pair = "exact"
            trials = 2
            alice = [["0", "0"], ["pi/4", "pi/8"], ["pi/4", 0], ["pi/8", "pi/16"]]
            [cheat]
            policy = "rules"
            [[cheat.rules]]
            alice = 0
            bob = 1
            setting = ["0", "0"]
        "#;
        let cfg = RawConfig::parse(text, "t").unwrap().resolve().unwrap();
        assert_eq!(cfg.plan.counts, CountMode::Exact);
        assert_eq!(cfg.plan.alice[3], WavePlateSetting::new(PI / 8.0, PI / 16.0));
        match &cfg.cheat {
            CheatChoice::Rules(r) => assert_eq!(r, &vec![(0, 1, WavePlateSetting::new(0.0, 0.0))]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn field_errors_name_the_field() {
        let bad_counts = HONEST.replace("14000", "50");
        let err = RawConfig::parse(&bad_counts, "t").unwrap().resolve().unwrap_err();
        assert!(err.to_string().starts_with("plan:"), "{err}");

        let bad_policy = HONEST.replace("\"none\"", "\"sneaky\"");
        let err = RawConfig::parse(&bad_policy, "t").unwrap().resolve().unwrap_err();
        assert!(err.to_string().starts_with("cheat.policy:"), "{err}");

        let bad_prob = HONEST.replace("0.928", "1.5");
        let err = RawConfig::parse(&bad_prob, "t").unwrap().resolve().unwrap_err();
        assert!(err.to_string().starts_with("state:"), "{err}");

        let bad_angle = format!("{HONEST}\n");
        let bad_angle = bad_angle.replace("seed = 7", "seed = 7\nbob = [[\"x\", 0], [0, 0], [0, 0], [0, 0]]");
        let err = RawConfig::parse(&bad_angle, "t").unwrap().resolve().unwrap_err();
        assert!(err.to_string().starts_with("plan.bob[0]:"), "{err}");
    }

    #[test]
    fn syntax_errors_report_a_line() {
        let err = RawConfig::parse("[state]\np_s = \np_w = 1", "broken.cfg").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("broken.cfg"), "{msg}");
        assert!(msg.contains("line 2") || msg.contains(":2:"), "{msg}");

        let err = RawConfig::parse("[state]\np_s = 1\np_w = 1\nbogus = 3\n", "x").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }
}
