//! Flat `key = value` settings shared by config files and flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use witunet::{Error, Result};

/// Parses a config file into `key → value`. Keys may use `_` or `-`.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Usage(m) => Error::Usage(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Usage(format!("line {}: empty key", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Usage(format!("invalid value `{value}` for `{key}`: {e}")))
}

/// Applies config-file entries through `set`, rejecting unknown keys.
pub fn apply_file(
    entries: &BTreeMap<String, String>,
    known: &[&str],
    mut set: impl FnMut(&str, &str) -> Result<()>,
) -> Result<()> {
    for (k, v) in entries {
        if !known.contains(&k.as_str()) {
            return Err(Error::Usage(format!("unknown config key `{k}`; known keys: {}", known.join(", "))));
        }
        set(k, v)?;
        info!("config file: {k} = {v}");
    }
    Ok(())
}

/// Declares a settings struct with defaults, a matching clap argument
/// group of optional overrides, and string-keyed setters.
macro_rules! settings {
    (
        $(#[$meta:meta])*
        $name:ident / $args:ident {
            $( $field:ident : $ty:ty = $default:expr, $key:literal, $help:literal $(, [$($extra:tt)*])? ; )*
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $( pub $field: $ty, )*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        #[derive(clap::Args, Clone, Debug, Default)]
        pub struct $args {
            $(
                #[arg(long = $key, help = format!("{} [default: {:?}]", $help, $name::default().$field) $(, $($extra)*)?)]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> witunet::Result<()> {
                match key {
                    $( $key => self.$field = $crate::settings::parse_value(key, value)?, )*
                    _ => {
                        return Err(witunet::Error::Usage(format!(
                            "unknown key `{key}`; known keys: {}",
                            Self::KEYS.join(", ")
                        )))
                    }
                }
                Ok(())
            }

            pub fn apply_flags(&mut self, args: &$args) {
                $(
                    if let Some(v) = &args.$field {
                        log::info!("command line: {} = {:?}", $key, v);
                        self.$field = v.clone();
                    }
                )*
            }
        }
    };
}

pub(crate) use settings;
