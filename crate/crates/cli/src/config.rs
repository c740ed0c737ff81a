//! Flat `key = value` configuration merged under command-line flags.
//!
//! Keys are flag names with `-` written as `_`. A flag given on the command
//! line wins over the file, which wins over the built-in default. Every
//! resolved value is recorded so the run can print what it actually used.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Every key any subcommand understands; anything else in a file is rejected.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    // synth
    "count",
    "family",
    "magnitude",
    "size",
    "keypoints",
    "flip",
    "crop",
    "out",
    // descriptor and model
    "cell_size",
    "orientation_bins",
    "resize",
    "features",
    "hidden",
    "pool",
    // train
    "data",
    "pairs",
    "members",
    "epochs",
    "batch_size",
    "lr",
    "warmup_steps",
    "warmup_lr",
    "lambda_c",
    "lambda_t",
    "phi",
    "cycle_sample",
    "sample_count",
    "cycle_stage",
    "detach_masks",
    "foreground_guided",
    "swap",
    "log",
    // eval, match, warp, masks
    "weights",
    "tau",
    "box_side",
    "report",
    "a",
    "b",
    "gt",
    "warped",
    "image",
    "transform",
];

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, (String, usize)>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key = value", i + 1));
            };
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key {key:?}", i + 1));
            }
            if file.insert(key.clone(), (value.trim().to_owned(), i + 1)).is_some() {
                return Err(format!("line {}: duplicate key {key:?}", i + 1));
            }
        }
        Ok(Self {
            file,
            resolved: Vec::new(),
        })
    }

    fn lookup<T: FromStr>(&self, key: &str, flag: Option<String>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let (raw, origin) = match flag {
            Some(v) => (v, format!("--{}", key.replace('_', "-"))),
            None => match self.file.get(key) {
                Some((v, line)) => (v.clone(), format!("config line {line}")),
                None => return Ok(None),
            },
        };
        raw.parse::<T>()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("{origin}: bad value {raw:?} for {key}: {e}")))
    }

    /// Flag, then file, then `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<String>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.push((key.to_owned(), v.to_string()));
        Ok(v)
    }

    /// Flag, then file; absent values are recorded as `-`.
    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<String>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v: Option<T> = self.lookup(key, flag)?;
        let shown = v.as_ref().map_or_else(|| "-".to_owned(), ToString::to_string);
        self.resolved.push((key.to_owned(), shown));
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<String>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &str, flag: Option<String>) -> Result<PathBuf, CliError> {
        self.required::<String>(key, flag).map(PathBuf::from)
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<String>) -> Result<Option<PathBuf>, CliError> {
        Ok(self.optional::<String>(key, flag)?.map(PathBuf::from))
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# resolved config\n");
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
