//! Flat `key = value` config files and flag > file > default resolution.
//!
//! ```text
//! # campaign.cfg
//! models = gcn, gat
//! datasets = cora
//! bers = 1e-7, 1e-5, 1e-3
//! trials = 10
//! ```
//!
//! Keys are the long flag names, with `-` and `_` interchangeable. A key the
//! subcommand does not read is an error, as is a repeated key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use gnnfi_core::inject::FaultTarget;
use gnnfi_core::model::Arch;
use gnnfi_core::trial::MitigationKind;

use crate::data::DatasetName;

/// Environment variable that overrides every master seed.
pub const SEED_ENV: &str = "GFI_SEED";

/// A mistake in how the program was invoked: bad flag values, config files
/// or combinations. Reported with exit status 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub type Result<T, E = UsageError> = std::result::Result<T, E>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()))
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigFile {
    pub path: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("{path}:{}: expected `key = value`", i + 1));
            };
            let key = normalize(k);
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return usage(format!("{path}:{}: bad key `{}`", i + 1, k.trim()));
            }
            if let Some((_, first)) = entries.insert(key.clone(), (v.trim().to_string(), i + 1)) {
                return usage(format!("{path}:{}: `{key}` already set on line {first}", i + 1));
            }
        }
        Ok(ConfigFile {
            path: path.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// A value that can come from a flag or a config file.
pub trait Setting: Sized {
    fn parse_setting(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! via_from_str {
    ($($t:ty),*) => {$(
        impl Setting for $t {
            fn parse_setting(s: &str) -> Result<Self, String> {
                s.trim().parse().map_err(|e| format!("`{s}`: {e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_from_str!(u32, u64, usize, String, Arch, FaultTarget, MitigationKind, DatasetName);

impl Setting for f64 {
    fn parse_setting(s: &str) -> Result<Self, String> {
        s.trim().parse().map_err(|e| format!("`{s}`: {e}"))
    }
    fn show(&self) -> String {
        format!("{self:e}")
    }
}

impl Setting for bool {
    fn parse_setting(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            _ => Err(format!("`{s}` is not a boolean")),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Setting for PathBuf {
    fn parse_setting(s: &str) -> Result<Self, String> {
        match s.trim() {
            "" => Err("empty path".into()),
            p => Ok(PathBuf::from(p)),
        }
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

/// Comma-separated lists.
impl<T: Setting> Setting for Vec<T> {
    fn parse_setting(s: &str) -> Result<Self, String> {
        let items: Vec<T> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(T::parse_setting)
            .collect::<Result<_, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(items)
    }
    fn show(&self) -> String {
        self.iter().map(Setting::show).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Env,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::File => "config",
            Source::Env => SEED_ENV,
            Source::Default => "default",
        })
    }
}

/// One subcommand's settings, resolved key by key.
#[derive(Debug)]
pub struct Resolver {
    file: Option<ConfigFile>,
    env_seed: Option<String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String, Source)>,
}

impl Resolver {
    pub fn new(file: Option<ConfigFile>) -> Self {
        Resolver {
            file,
            env_seed: std::env::var(SEED_ENV).ok().filter(|s| !s.trim().is_empty()),
            used: BTreeSet::new(),
            resolved: Vec::new(),
        }
    }

    /// Replaces the `GFI_SEED` value read from the environment.
    pub fn with_env_seed(mut self, seed: Option<&str>) -> Self {
        self.env_seed = seed.map(str::to_string);
        self
    }

    fn lookup<T: Setting>(&mut self, key: &str, flag: Option<&str>) -> Result<Option<(T, Source)>> {
        let key = normalize(key);
        self.used.insert(key.clone());
        if let Some(raw) = flag {
            let v = T::parse_setting(raw).map_err(|e| UsageError(format!("--{}: {e}", key.replace('_', "-"))))?;
            return Ok(Some((v, Source::Flag)));
        }
        if let Some(file) = &self.file {
            if let Some(raw) = file.get(&key) {
                let v = T::parse_setting(raw).map_err(|e| UsageError(format!("{}: {key}: {e}", file.path)))?;
                return Ok(Some((v, Source::File)));
            }
        }
        Ok(None)
    }

    fn note<T: Setting>(&mut self, key: &str, v: &T, source: Source) {
        self.resolved.push((normalize(key), v.show(), source));
    }

    pub fn value<T: Setting>(&mut self, key: &str, flag: Option<&str>, default: T) -> Result<T> {
        let (v, source) = self.lookup(key, flag)?.unwrap_or((default, Source::Default));
        self.note(key, &v, source);
        Ok(v)
    }

    pub fn optional<T: Setting>(&mut self, key: &str, flag: Option<&str>) -> Result<Option<T>> {
        let found = self.lookup::<T>(key, flag)?;
        if let Some((v, source)) = &found {
            self.note(key, v, *source);
        }
        Ok(found.map(|(v, _)| v))
    }

    pub fn required<T: Setting>(&mut self, key: &str, flag: Option<&str>) -> Result<T> {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => usage(format!("missing --{} (or `{}` in the config file)", key.replace('_', "-"), normalize(key))),
        }
    }

    /// A master seed: `GFI_SEED` wins over the flag, the file and the default.
    pub fn seed(&mut self, key: &str, flag: Option<&str>, default: u64) -> Result<u64> {
        let from_flags = self.lookup::<u64>(key, flag)?;
        let (v, source) = match self.env_seed.clone() {
            Some(raw) => (
                u64::parse_setting(&raw).map_err(|e| UsageError(format!("{SEED_ENV}: {e}")))?,
                Source::Env,
            ),
            None => from_flags.unwrap_or((default, Source::Default)),
        };
        self.note(key, &v, source);
        Ok(v)
    }

    /// Rejects config keys nobody read and returns the resolved settings.
    pub fn finish(self, command: &str) -> Result<Vec<(String, String, Source)>> {
        if let Some(file) = &self.file {
            let unknown: Vec<&str> = file.keys().filter(|k| !self.used.contains(*k)).collect();
            if !unknown.is_empty() {
                return usage(format!("{}: unknown key(s) for `{command}`: {}", file.path, unknown.join(", ")));
            }
        }
        for (k, v, s) in &self.resolved {
            log::info!("{command}: {k} = {v} ({s})");
        }
        Ok(self.resolved)
    }
}
