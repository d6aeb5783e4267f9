//! Run settings from flags and flat `key=value` files.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use vocabpipe::{Method, ModelConfig};

/// Everything a subcommand may read. Unset fields fall back to the
/// subcommand's defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub method: Option<Method>,
    pub batch: Option<usize>,
    pub seq_len: Option<usize>,
    pub hidden: Option<usize>,
    pub vocab: Option<usize>,
    pub layers: Option<usize>,
    pub devices: Option<usize>,
    pub microbatches: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Collective latency as a fraction of a stage forward.
    pub collective: Option<f64>,
    /// Activation bytes per layer, in units of b·s·h.
    pub act_bytes: Option<f64>,
    pub bytes_per_param: Option<f64>,
    pub vocab_sweep: Option<Vec<usize>>,
    /// Output-layer cost in transformer layers, for `redistribute`.
    pub ratio: Option<f64>,
}

const KEYS: [&str; 15] = [
    "method",
    "batch",
    "seq_len",
    "hidden",
    "vocab",
    "layers",
    "devices",
    "microbatches",
    "seed",
    "out",
    "collective",
    "act_bytes",
    "bytes_per_param",
    "vocab_sweep",
    "ratio",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("bad value `{value}` for `{key}`"))
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", idx + 1))?;
            s.set(key.trim(), value.trim()).with_context(|| format!("line {}", idx + 1))?;
        }
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "method" => self.method = Some(value.parse()?),
            "batch" => self.batch = Some(num(&key, value)?),
            "seq_len" => self.seq_len = Some(num(&key, value)?),
            "hidden" => self.hidden = Some(num(&key, value)?),
            "vocab" => self.vocab = Some(num(&key, value)?),
            "layers" => self.layers = Some(num(&key, value)?),
            "devices" => self.devices = Some(num(&key, value)?),
            "microbatches" => self.microbatches = Some(num(&key, value)?),
            "seed" => self.seed = Some(num(&key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "collective" => self.collective = Some(num(&key, value)?),
            "act_bytes" => self.act_bytes = Some(num(&key, value)?),
            "bytes_per_param" => self.bytes_per_param = Some(num(&key, value)?),
            "vocab_sweep" => {
                let list = value
                    .split(',')
                    .map(|v| num(&key, v.trim()))
                    .collect::<Result<Vec<usize>>>()?;
                self.vocab_sweep = Some(list);
            }
            "ratio" => self.ratio = Some(num(&key, value)?),
            _ => bail!("unknown key `{key}` (known: {})", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: Settings) -> Settings {
        Settings {
            method: over.method.or(self.method),
            batch: over.batch.or(self.batch),
            seq_len: over.seq_len.or(self.seq_len),
            hidden: over.hidden.or(self.hidden),
            vocab: over.vocab.or(self.vocab),
            layers: over.layers.or(self.layers),
            devices: over.devices.or(self.devices),
            microbatches: over.microbatches.or(self.microbatches),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            collective: over.collective.or(self.collective),
            act_bytes: over.act_bytes.or(self.act_bytes),
            bytes_per_param: over.bytes_per_param.or(self.bytes_per_param),
            vocab_sweep: over.vocab_sweep.or(self.vocab_sweep),
            ratio: over.ratio.or(self.ratio),
        }
    }

    /// Model shape with unset fields taken from `base`.
    pub fn model(&self, base: ModelConfig) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            b: self.batch.unwrap_or(base.b),
            s: self.seq_len.unwrap_or(base.s),
            h: self.hidden.unwrap_or(base.h),
            v: self.vocab.unwrap_or(base.v),
            l: self.layers.unwrap_or(base.l),
            p: self.devices.unwrap_or(base.p),
            n: self.microbatches.unwrap_or(base.n),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The set fields in the file format accepted by [`Settings::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                let _ = writeln!(out, "{key}={v}");
            }
        };
        put("method", self.method.map(|m| m.to_string()));
        put("batch", self.batch.map(|v| v.to_string()));
        put("seq_len", self.seq_len.map(|v| v.to_string()));
        put("hidden", self.hidden.map(|v| v.to_string()));
        put("vocab", self.vocab.map(|v| v.to_string()));
        put("layers", self.layers.map(|v| v.to_string()));
        put("devices", self.devices.map(|v| v.to_string()));
        put("microbatches", self.microbatches.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("collective", self.collective.map(|v| v.to_string()));
        put("act_bytes", self.act_bytes.map(|v| v.to_string()));
        put("bytes_per_param", self.bytes_per_param.map(|v| v.to_string()));
        put(
            "vocab_sweep",
            self.vocab_sweep
                .as_ref()
                .map(|l| l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
        );
        put("ratio", self.ratio.map(|v| v.to_string()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let s = Settings::parse("# run\nmethod = vocab2\nseq-len=16 # short\n\nvocab_sweep=8,16\n").unwrap();
        assert_eq!(s.method, Some(Method::Vocab2));
        assert_eq!(s.seq_len, Some(16));
        assert_eq!(s.vocab_sweep, Some(vec![8, 16]));
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(Settings::parse("colour=red").is_err());
        assert!(Settings::parse("devices=four").is_err());
        assert!(Settings::parse("method=zigzag").is_err());
        assert!(Settings::parse("devices").is_err());
    }

    #[test]
    fn later_settings_win() {
        let file = Settings::parse("devices=4\nlayers=8").unwrap();
        let flags = Settings { devices: Some(2), ..Settings::default() };
        let s = file.overridden_by(flags);
        assert_eq!((s.devices, s.layers), (Some(2), Some(8)));
    }

    #[test]
    fn text_round_trip() {
        let s = Settings {
            method: Some(Method::VHalfVocab1),
            devices: Some(4),
            collective: Some(0.25),
            out: Some(PathBuf::from("runs/a")),
            vocab_sweep: Some(vec![1, 2]),
            ..Settings::default()
        };
        assert_eq!(Settings::parse(&s.to_text()).unwrap(), s);
    }
}
