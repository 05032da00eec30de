//! Settings resolution: command-line flags, then a flat `key = value`
//! config file, then `UCERF_*` environment variables, then defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const ENV_PREFIX: &str = "UCERF_";

/// Normalises `Cache_Dir`, `cache-dir` and `cache_dir` to `cache-dir`.
pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('-', "_"))
}

/// Parses a config file. Blank lines and lines starting with `#` are
/// skipped; every other line must be `key = value`.
pub fn parse_config(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = normalize_key(k);
        if !allowed.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        let value = v.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(value);
        out.insert(key, value.to_string());
    }
    Ok(out)
}

pub struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    pub fn empty() -> Self {
        Self { file: BTreeMap::new() }
    }

    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self, CliError> {
        let path = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(env_name("config")).map(Into::into),
        };
        let Some(path) = path else { return Ok(Self::empty()) };
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        Ok(Self {
            file: parse_config(&text, allowed)?,
        })
    }

    /// The raw value for `key` from the file or environment.
    pub fn lookup(&self, key: &str) -> Option<(String, String)> {
        if let Some(v) = self.file.get(key) {
            return Some((format!("config key `{key}`"), v.clone()));
        }
        let name = env_name(key);
        std::env::var(&name).ok().map(|v| (name, v))
    }

    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.lookup(key) {
            None => Ok(None),
            Some((origin, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("{origin}: invalid value `{raw}`: {e}"))),
        }
    }

    pub fn resolve_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.resolve(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.resolve(flag, key)?.ok_or_else(|| {
            CliError::Usage(format!(
                "--{key} is required (or set `{key}` in the config file or {})",
                env_name(key)
            ))
        })
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.resolve::<bool>(None, key)?.unwrap_or(false))
    }

    /// List-valued settings given as repeated flags, or comma separated in
    /// the file or environment.
    pub fn list(&self, flag: Vec<String>, key: &str) -> Vec<String> {
        if !flag.is_empty() {
            return flag;
        }
        self.lookup(key)
            .map(|(_, v)| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Seed lists: comma separated integers or inclusive ranges `a..b`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("invalid seed `{s}`"));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
                if a > b {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = out.iter().find(|s| !seen.insert(**s)) {
        return Err(format!("seed {dup} listed twice"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_default_range_is_inclusive() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3, 1,7..=8").unwrap(), vec![3, 1, 7, 8]);
    }

    #[test]
    fn bad_seed_lists() {
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("4..1").is_err());
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn config_lines() {
        let m = parse_config("# c\n\nmodel = tiny\nCache_Dir=\"/tmp/c\"\n", &["model", "cache-dir"]).unwrap();
        assert_eq!(m["model"], "tiny");
        assert_eq!(m["cache-dir"], "/tmp/c");
        assert!(parse_config("nope = 1", &["model"]).is_err());
        assert!(parse_config("model", &["model"]).is_err());
    }

    #[test]
    fn flag_beats_file() {
        let s = Settings {
            file: parse_config("bins = 7", &["bins"]).unwrap(),
        };
        assert_eq!(s.resolve(Some(3usize), "bins").unwrap(), Some(3));
        assert_eq!(s.resolve::<usize>(None, "bins").unwrap(), Some(7));
        assert!(s.require::<usize>(None, "not-a-real-key").is_err());
    }
}
