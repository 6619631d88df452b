// SPDX-License-Identifier: Apache-2.0

//! `key = value` config files. Flags given on the command line win over the
//! file, the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
/// Keys may use `-` or `_`.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

/// Merges flags, config file and defaults, remembering every resolved value
/// for the manifest.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let file = match path {
            Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Flag value if given, else the file's, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.take(key, flag)? {
            Some(v) => v,
            None => default,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`Resolver::get`] without a default; absent keys stay unrecorded.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.take(key, flag)?;
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn take<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.file.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Config(format!("`{key} = {s}`: {e}")))
            })
            .transpose()
    }

    /// Errors on config keys no command option consumed.
    pub fn finish(self) -> CliResult<BTreeMap<String, String>> {
        if let Some(k) = self.file.keys().next() {
            return Err(CliError::Config(format!("unknown config key `{k}`")));
        }
        Ok(self.resolved)
    }
}

/// A comma list of numbers, or an inclusive `start:stop:step` range.
pub fn parse_number_list(s: &str) -> CliResult<Vec<f64>> {
    let bad = |m: String| CliError::Config(format!("`{s}`: {m}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
    let parts: Vec<&str> = s.split(':').collect();
    let v = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, d) = (num(start)?, num(stop)?, num(step)?);
            if !(d > 0.0 && d.is_finite() && b >= a) {
                return Err(bad("range needs start <= stop and a positive step".into()));
            }
            // index-based so a 0.5 step never accumulates rounding
            let n = ((b - a) / d + 1e-9).floor() as usize;
            (0..=n).map(|i| a + i as f64 * d).collect()
        }
        [_] => s.split(',').map(num).collect::<CliResult<Vec<_>>>()?,
        _ => return Err(bad("expected a list or start:stop:step".into())),
    };
    if v.is_empty() {
        return Err(bad("empty list".into()));
    }
    Ok(v)
}

pub fn join_numbers(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
