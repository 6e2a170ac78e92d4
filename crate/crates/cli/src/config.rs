//! Config resolution: built-in defaults, then the file, then flags.

use std::path::Path;

use maser_core::config::CONFIG_KEYS;
use maser_core::{MaserError, Result, TrainConfig};

/// Flag name for a config key (`lambda_i` becomes `lambda-i`).
pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Keys whose flags take no value.
pub fn is_switch(key: &str) -> bool {
    matches!(default_table().get(key), Some(toml::Value::Boolean(_)))
}

fn default_table() -> toml::Table {
    TrainConfig::default().to_toml().parse().expect("default config is valid TOML")
}

fn typed_value(key: &str, raw: &str) -> Result<toml::Value> {
    let bad = |what: &str| MaserError::Config(format!("--{} expects {what}, got `{raw}`", flag_name(key)));
    Ok(match default_table().get(key) {
        Some(toml::Value::Integer(_)) => toml::Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
        Some(toml::Value::Float(_)) => toml::Value::Float(raw.parse().map_err(|_| bad("a number"))?),
        Some(toml::Value::Boolean(_)) => toml::Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
        _ => toml::Value::String(raw.to_string()),
    })
}

/// Resolves a config from an optional TOML file and `(key, value)` flag
/// overrides, then checks every range constraint.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| MaserError::Config(format!("cannot read config file {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| MaserError::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(MaserError::Config(format!(
                "unknown key `{key}`\nvalid keys: {}",
                CONFIG_KEYS.join(", ")
            )));
        }
        table.insert(key.clone(), typed_value(key, raw)?);
    }
    let text = toml::to_string(&table).map_err(|e| MaserError::Config(e.to_string()))?;
    let cfg = TrainConfig::from_toml(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn no_file_gives_defaults() {
        assert_eq!(parse_config(None, &[]).unwrap(), TrainConfig::default());
    }

    #[test]
    fn flag_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "lambda = 0.03\nseed = 4\n").unwrap();
        let cfg = parse_config(Some(&path), &[ov("lambda", "0.05")]).unwrap();
        assert_eq!(cfg.lambda, 0.05);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn range_and_type_errors() {
        let e = parse_config(None, &[ov("alpha", "1.5")]).unwrap_err();
        assert!(e.to_string().contains("alpha"), "{e}");
        assert!(parse_config(None, &[ov("lambda", "-1")]).is_err());
        assert!(parse_config(None, &[ov("seed", "x")]).is_err());
        let e = parse_config(None, &[ov("alpah", "0.3")]).unwrap_err();
        assert!(e.to_string().contains("valid keys"));
    }

    #[test]
    fn integers_accepted_for_floats_and_strings_kept() {
        let cfg = parse_config(None, &[ov("lambda", "0"), ov("env", "cliff-2v2"), ov("disable_li", "true")]).unwrap();
        assert_eq!(cfg.lambda, 0.0);
        assert_eq!(cfg.env, "cliff-2v2");
        assert!(cfg.disable_li);
        assert!(is_switch("disable_repr"));
        assert!(!is_switch("alpha"));
    }

    #[test]
    fn missing_file_is_config_error() {
        let e = parse_config(Some(Path::new("/nonexistent/x.toml")), &[]).unwrap_err();
        assert!(matches!(e, MaserError::Config(_)));
    }
}
