//! Flat key-value configuration.
//!
//! Config files are plain text, one `key = value` per line, `#` comments.
//! Every key has a built-in default; unknown keys in a file are rejected with
//! the offending key path. Any key can also be overridden from the
//! environment: `mfgnet.kernel_size` becomes `RGBT_MFGNET_KERNEL_SIZE`.

use crate::{Error, Result};
use indexmap::IndexMap;
use std::path::Path;

/// Environment variable prefix for config overrides.
pub const ENV_PREFIX: &str = "RGBT_";

/// `(key, default, help)` for every supported key. This is the single source
/// of truth; `Config::default()` and the README table are generated from it.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "17", "master RNG seed for weight init and sampling"),
    ("backbone.channels", "512", "output channels of the encoder (conv widths scale with it; 32 is the reduced test profile)"),
    ("backbone.input_size", "0", "resize frames to this square size before encoding (0 = keep native size, must be divisible by 8)"),
    ("mfgnet.kernel_size", "3", "side s of the predicted dynamic kernels; odd, 1..=5"),
    ("mfgnet.mode", "mfg", "dynamic filter mode: mfg (two modality-aware banks), naive (one shared bank), off (plain concat)"),
    ("mfgnet.tanh_squash", "false", "squash predicted kernels with tanh before applying them"),
    ("cbam.enabled", "true", "apply channel+spatial attention to backbone features before filter generation"),
    ("cbam.reduction", "16", "channel-attention MLP reduction ratio (hidden width is clamped to >= 4)"),
    ("cbam.spatial_kernel", "7", "kernel size of the spatial-attention convolution; odd"),
    ("datanet.clip_len", "2", "number of past/current frame pairs fed to the global attention network"),
    ("datanet.profile", "paper", "channel profile of the attention network: paper (1024-wide sweeps) or desk (reduced)"),
    ("datanet.nms_radius", "20", "peak suppression radius in attention-map pixels for global proposal mining"),
    ("datanet.scale_jitter", "0.2", "relative size jitter applied to global proposals"),
    ("tracker.global_search", "true", "switch to attention-driven global proposals after repeated failures"),
    ("tracker.failure_threshold", "8", "consecutive failing frames before the global search activates"),
    ("tracker.update_interval", "10", "scheduled online update cadence in frames"),
    ("tracker.local_proposals", "256", "Gaussian proposals drawn per frame"),
    ("tracker.global_proposals", "128", "proposals mined from the attention map when global search is active"),
    ("tracker.sigma_xy", "0.3", "translation std of Gaussian sampling, in units of mean target extent"),
    ("tracker.sigma_scale", "0.5", "log-scale std of Gaussian sampling"),
    ("tracker.track_sigma_scale", "0.15", "log-scale std used for track-time proposals"),
    ("tracker.pos_iou", "0.7", "minimum IoU for a positive training sample"),
    ("tracker.neg_iou", "0.5", "maximum IoU for a negative training sample"),
    ("tracker.pos_per_frame", "32", "positives per online-update minibatch"),
    ("tracker.neg_per_frame", "96", "negatives per online-update minibatch (hard-mined)"),
    ("tracker.hard_pool", "1024", "negative candidates scored per mining round"),
    ("tracker.roi_bins", "3", "RoI-align grid is roi_bins x roi_bins"),
    ("tracker.head_hidden", "256", "width of the two hidden classifier layers"),
    ("tracker.init_pos", "200", "positive samples drawn on the first frame"),
    ("tracker.init_neg", "600", "negative samples drawn on the first frame"),
    ("tracker.init_iters", "80", "gradient steps of first-frame finetuning"),
    ("tracker.update_iters", "12", "gradient steps per online update"),
    ("tracker.lr", "0.0001", "SGD learning rate for online updates"),
    ("tracker.init_lr", "0.001", "SGD learning rate for first-frame finetuning"),
    ("tracker.momentum", "0.9", "SGD momentum"),
    ("tracker.weight_decay", "0.0005", "SGD weight decay"),
    ("tracker.short_term_frames", "20", "capacity of the short-term sample store, in frames"),
    ("tracker.long_term_frames", "100", "capacity of the long-term sample store, in frames"),
    ("tracker.store_pos", "32", "positive samples collected per successful frame"),
    ("tracker.store_neg", "128", "negative samples collected per successful frame"),
    ("train.attention_steps", "400", "training steps for the global attention network"),
    ("train.attention_lr", "0.05", "Adagrad learning rate for attention training"),
    ("train.tracker_steps", "200", "iterations of offline multi-domain tracker training"),
    ("train.tracker_lr", "0.0001", "SGD learning rate for offline tracker training"),
    ("train.domains", "4", "synthetic sequences (domains) for offline tracker training"),
    ("eval.pr_threshold", "20", "center-distance threshold in pixels for the precision rate"),
    ("eval.sr_threshold", "0.6", "IoU threshold for the reported scalar success rate"),
];

#[derive(Clone, Debug)]
pub struct Config {
    map: IndexMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        let map = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), v.to_string()))
            .collect();
        Config { map }
    }
}

impl Config {
    /// Parse a flat key-value file on top of the defaults, then apply any
    /// `RGBT_*` environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Config::default();
        cfg.parse_str(&text, &path.display().to_string())?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn parse_str(&mut self, text: &str, file: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: file.to_string(),
                line: lineno + 1,
                message: format!("expected `key = value`, got `{raw}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set a key, rejecting keys that are not in the documented table.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.map.contains_key(key) {
            return Err(Error::config(key, "unknown config key"));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Environment overrides: `RGBT_` + key uppercased with dots mapped to
    /// underscores.
    pub fn apply_env(&mut self) {
        for (key, _, _) in KEYS {
            let env_name = format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase());
            if let Ok(v) = std::env::var(&env_name) {
                self.map.insert(key.to_string(), v);
            }
        }
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::config(key, "unknown config key"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let s = self.get_str(key)?;
        s.parse()
            .map_err(|_| Error::config(key, format!("expected unsigned integer, got `{s}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let s = self.get_str(key)?;
        s.parse()
            .map_err(|_| Error::config(key, format!("expected number, got `{s}`")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get_str(key)? {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            s => Err(Error::config(key, format!("expected boolean, got `{s}`"))),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let s = self.get_str(key)?;
        s.parse()
            .map_err(|_| Error::config(key, format!("expected integer, got `{s}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let cfg = Config::default();
        for (key, _, _) in KEYS {
            assert!(cfg.get_str(key).is_ok(), "missing default for {key}");
        }
        assert_eq!(cfg.get_usize("mfgnet.kernel_size").unwrap(), 3);
        assert_eq!(cfg.get_usize("tracker.failure_threshold").unwrap(), 8);
        assert!((cfg.get_f64("tracker.sigma_xy").unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn parse_and_unknown_key_rejection() {
        let mut cfg = Config::default();
        cfg.parse_str(
            "# comment\nmfgnet.kernel_size = 5\ncbam.enabled = false # inline\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.get_usize("mfgnet.kernel_size").unwrap(), 5);
        assert!(!cfg.get_bool("cbam.enabled").unwrap());

        let err = cfg.parse_str("mfgnet.kernelsize = 5\n", "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mfgnet.kernelsize"), "error should name the key: {msg}");
    }

    #[test]
    fn env_override() {
        let key = "RGBT_TRACKER_UPDATE_INTERVAL";
        std::env::set_var(key, "7");
        let mut cfg = Config::default();
        cfg.apply_env();
        std::env::remove_var(key);
        assert_eq!(cfg.get_usize("tracker.update_interval").unwrap(), 7);
    }

    #[test]
    fn malformed_line_reports_position() {
        let mut cfg = Config::default();
        let err = cfg.parse_str("seed = 1\nnot a kv line\n", "cfg.txt").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
