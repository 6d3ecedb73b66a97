use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use apcen_core::config::load_kv;
use clap::ValueEnum;
use apcen_core::{Error, Result};

/// Every key any subcommand reads from a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    // front-end
    "n_filters",
    "kernel_len",
    "hop",
    "f_min",
    "f_max",
    // extract / eval
    "variant",
    "format",
    "split",
    "window_seconds",
    // augmentation
    "snr_min",
    "snr_max",
    "babble_sources",
    "gain_min",
    "gain_max",
    "segment_ms",
    "spl_min",
    "spl_max",
    "crossfade_ms",
    // synthetic task
    "profile",
    "train_per_class",
    "val_per_class",
    "test_per_class",
    "train_seconds",
    "test_seconds",
    // training
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "clip_seconds",
    "controller_hidden",
    "controller_mlp_hidden",
    "backend_hidden",
    "bptt_window",
    // gradcheck
    "module",
    "instances",
    "step",
];

/// Resolves each setting as flag, then config file, then default, and
/// remembers the outcome for printing.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String, &'static str)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => load_kv(p)?,
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::ConfigInvalid(format!("unknown config key '{k}'")));
        }
        Ok(Self { file, resolved: Vec::new() })
    }

    pub fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        let (v, src) = match (flag, self.file.get(key)) {
            (Some(v), _) => (v, "flag"),
            (None, Some(s)) => (apcen_core::config::parse_value(key, s)?, "config"),
            (None, None) => (default, "default"),
        };
        self.resolved.push((key.to_string(), v.to_string(), src));
        Ok(v)
    }

    /// Like [`Self::pick`] without a default; unresolved settings print as `none`.
    pub fn pick_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
    {
        let (v, src) = match (flag, self.file.get(key)) {
            (Some(v), _) => (Some(v), "flag"),
            (None, Some(s)) if s != "none" => (Some(apcen_core::config::parse_value(key, s)?), "config"),
            _ => (None, "default"),
        };
        let shown = v.as_ref().map_or("none".to_string(), |v| v.to_string());
        self.resolved.push((key.to_string(), shown, src));
        Ok(v)
    }

    /// [`Self::pick`] for command-line enums; config values may use `_` or `-`.
    pub fn pick_enum<T: ValueEnum>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let (v, src) = match (flag, self.file.get(key)) {
            (Some(v), _) => (v, "flag"),
            (None, Some(s)) => (
                T::from_str(&s.replace('_', "-"), true)
                    .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse '{s}'")))?,
                "config",
            ),
            (None, None) => (default, "default"),
        };
        let name = v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default();
        self.resolved.push((key.to_string(), name, src));
        Ok(v)
    }

    /// Records a value that does not come from the flag/config chain.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.push((key.to_string(), value.to_string(), "input"));
    }

    /// Resolved configuration as printed to stderr.
    pub fn render(&self) -> String {
        self.resolved.iter().map(|(k, v, s)| format!("{k} = {v}  # {s}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_config_beats_default() {
        let mut s = Settings::default();
        s.file.insert("epochs".into(), "7".into());
        s.file.insert("hop".into(), "80".into());
        assert_eq!(s.pick("epochs", Some(3usize), 30).unwrap(), 3);
        assert_eq!(s.pick("hop", None, 160usize).unwrap(), 80);
        assert_eq!(s.pick("n_filters", None, 40usize).unwrap(), 40);
        assert!(s.render().contains("hop = 80  # config"));
    }

    #[test]
    fn bad_config_value_names_key() {
        let mut s = Settings::default();
        s.file.insert("epochs".into(), "many".into());
        let e = s.pick("epochs", None, 1usize).unwrap_err();
        assert!(e.to_string().contains("epochs"));
    }
}
