//! Flat `key = value` configuration files.
//!
//! ```text
//! # two coupled squeezed modes
//! modes = 2
//! mode1.gamma0 = 2.8
//! mode1.gammac = 1
//! mode1.eps_im = 2
//! mode2.gamma0 = 3.2
//! mode2.gammac = 1
//! mode2.eps_im = -2
//! coupling.g = 0.1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{tone_probe, ModeParams, SensorConfig, DEFAULT_PROBE_AMPLITUDE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingRequiredKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

const MODE_FIELDS: [&str; 6] = ["delta", "gamma0", "gammac", "kappa", "eps_re", "eps_im"];
const GLOBAL_KEYS: [&str; 6] =
    ["coupling.g", "probe.omega", "probe.alpha", "probe.driven_modes", "probe.mu", "perturbation.theta"];

struct Entry {
    line: usize,
    value: String,
}

fn number(key: &str, e: &Entry) -> Result<f64, ConfigError> {
    e.value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ConfigError::Parse {
        line: e.line,
        message: format!("`{key}`: expected a finite number, got `{}`", e.value),
    })
}

fn list<T: std::str::FromStr>(key: &str, e: &Entry) -> Result<Vec<T>, ConfigError> {
    e.value
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<T>, _>>()
        .map_err(|_| ConfigError::Parse { line: e.line, message: format!("`{key}`: bad list `{}`", e.value) })
}

/// Parses a configuration file's text.
pub fn parse_config(text: &str) -> Result<SensorConfig, ConfigError> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError::Parse { line, message: format!("expected `key = value`, got `{content}`") });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Parse { line, message: format!("empty key or value in `{content}`") });
        }
        if entries.contains_key(k) {
            return Err(ConfigError::Parse { line, message: format!("duplicate key `{k}`") });
        }
        entries.insert(k.to_string(), Entry { line, value: v.to_string() });
    }

    let modes_entry = entries.get("modes").ok_or_else(|| ConfigError::MissingRequiredKey("modes".into()))?;
    let n: usize = modes_entry.value.parse().map_err(|_| ConfigError::Parse {
        line: modes_entry.line,
        message: format!("`modes`: expected a positive integer, got `{}`", modes_entry.value),
    })?;
    if n == 0 {
        return Err(ConfigError::Parse { line: modes_entry.line, message: "`modes` must be at least 1".into() });
    }

    for (k, e) in &entries {
        let known = k == "modes"
            || GLOBAL_KEYS.contains(&k.as_str())
            || k.strip_prefix("mode").and_then(|rest| rest.split_once('.')).is_some_and(|(idx, field)| {
                idx.parse::<usize>().is_ok_and(|j| (1..=n).contains(&j) && idx == j.to_string())
                    && MODE_FIELDS.contains(&field)
            });
        if !known {
            return Err(ConfigError::UnknownKey { line: e.line, key: k.clone() });
        }
    }

    let get = |key: &str, default: Option<f64>| -> Result<f64, ConfigError> {
        match (entries.get(key), default) {
            (Some(e), _) => number(key, e),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(ConfigError::MissingRequiredKey(key.into())),
        }
    };

    let mut modes = Vec::with_capacity(n);
    for j in 1..=n {
        let f = |field: &str| format!("mode{j}.{field}");
        modes.push(ModeParams {
            delta: get(&f("delta"), Some(0.0))?,
            gamma0: get(&f("gamma0"), None)?,
            gammac: get(&f("gammac"), None)?,
            kappa: get(&f("kappa"), Some(0.0))?,
            eps: Complex64::new(get(&f("eps_re"), Some(0.0))?, get(&f("eps_im"), Some(0.0))?),
        });
    }

    let mu_in = match entries.get("probe.mu") {
        Some(e) => {
            if entries.contains_key("probe.alpha") || entries.contains_key("probe.driven_modes") {
                return Err(ConfigError::Parse {
                    line: e.line,
                    message: "`probe.mu` cannot be combined with `probe.alpha` or `probe.driven_modes`".into(),
                });
            }
            let mu: Vec<f64> = list("probe.mu", e)?;
            if mu.len() != 4 * n {
                return Err(ConfigError::Parse {
                    line: e.line,
                    message: format!("`probe.mu`: expected {} values, got {}", 4 * n, mu.len()),
                });
            }
            mu
        }
        None => {
            let alpha = get("probe.alpha", Some(DEFAULT_PROBE_AMPLITUDE))?;
            let driven: Vec<usize> = match entries.get("probe.driven_modes") {
                Some(e) => {
                    let d: Vec<usize> = list("probe.driven_modes", e)?;
                    if d.iter().any(|&j| j == 0 || j > n) {
                        return Err(ConfigError::Parse {
                            line: e.line,
                            message: format!("`probe.driven_modes`: modes are numbered 1..={n}"),
                        });
                    }
                    d.into_iter().map(|j| j - 1).collect()
                }
                None => vec![0],
            };
            tone_probe(n, alpha, &driven)
        }
    };

    let config = SensorConfig {
        modes,
        g: get("coupling.g", Some(0.0))?,
        theta: get("perturbation.theta", Some(0.0))?,
        omega: get("probe.omega", Some(0.0))?,
        mu_in,
    };
    config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(config)
}

/// Writes a configuration back out; [`parse_config`] reads it back exactly.
pub fn emit_config(config: &SensorConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "modes = {}", config.n_modes());
    for (j, m) in config.modes.iter().enumerate() {
        let j = j + 1;
        for (field, v) in
            [("delta", m.delta), ("gamma0", m.gamma0), ("gammac", m.gammac), ("kappa", m.kappa), ("eps_re", m.eps.re), ("eps_im", m.eps.im)]
        {
            let _ = writeln!(s, "mode{j}.{field} = {v:?}");
        }
    }
    let _ = writeln!(s, "coupling.g = {:?}", config.g);
    let _ = writeln!(s, "perturbation.theta = {:?}", config.theta);
    let _ = writeln!(s, "probe.omega = {:?}", config.omega);
    match config.tone() {
        Some((alpha, driven)) if !driven.is_empty() => {
            let d: Vec<String> = driven.iter().map(|j| (j + 1).to_string()).collect();
            let _ = writeln!(s, "probe.alpha = {alpha:?}");
            let _ = writeln!(s, "probe.driven_modes = {}", d.join(","));
        }
        _ => {
            let mu: Vec<String> = config.mu_in.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "probe.mu = {}", mu.join(","));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = "modes = 2\nmode1.gamma0 = 2.8\nmode1.gammac = 1\nmode1.eps_im = 2\n\
                       mode2.gamma0 = 3.2 # comment\nmode2.gammac = 1\nmode2.eps_im = -2\ncoupling.g = 0.1\n";

    #[test]
    fn parses_and_defaults() {
        let c = parse_config(FIG).unwrap();
        assert_eq!(c.n_modes(), 2);
        assert_eq!(c.modes[1].eps, Complex64::new(0.0, -2.0));
        assert_eq!(c.mu_in, tone_probe(2, 1e3, &[0]));
        assert_eq!(c.omega, 0.0);
    }

    #[test]
    fn zero_modes() {
        assert!(matches!(parse_config("modes = 0"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_names_key() {
        let e = parse_config(&format!("{FIG}coupling.g = 0.2\n")).unwrap_err();
        match e {
            ConfigError::Parse { line, message } => {
                assert_eq!(line, 9);
                assert!(message.contains("coupling.g"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing() {
        assert!(matches!(
            parse_config(&format!("{FIG}mode3.delta = 1\n")),
            Err(ConfigError::UnknownKey { line: 9, .. })
        ));
        assert!(matches!(parse_config(&format!("{FIG}colour = red\n")), Err(ConfigError::UnknownKey { .. })));
        assert_eq!(
            parse_config("modes = 1\nmode1.gamma0 = 1\n"),
            Err(ConfigError::MissingRequiredKey("mode1.gammac".into()))
        );
        assert_eq!(parse_config("# nothing\n"), Err(ConfigError::MissingRequiredKey("modes".into())));
    }

    #[test]
    fn bad_lines() {
        assert!(matches!(parse_config("modes 2"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(parse_config("modes = 1\nmode1.gamma0 = x\nmode1.gammac = 1"), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(
            parse_config("modes = 1\nmode1.gamma0 = 1\nmode1.gammac = 1\nprobe.driven_modes = 2"),
            Err(ConfigError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn emit_roundtrip() {
        let c = parse_config(FIG).unwrap().with_theta(1.0 / 3.0).with_probe(7.5, &[0, 1]);
        assert_eq!(parse_config(&emit_config(&c)).unwrap(), c);
        let custom = c.with_mu_in(vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(parse_config(&emit_config(&custom)).unwrap(), custom);
    }
}
