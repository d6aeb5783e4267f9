use std::fmt;
use std::str::FromStr;

use super::method::Method;
use super::pass::{Pass, PassKind};
use crate::cost::ModelConfig;
use crate::error::{Error, Result};

/// Per-device execution order of a schedule.
///
/// Text form:
///
/// ```text
/// method vocab2
/// config b=1 s=2048 h=4096 V=128000 L=32 p=8 n=64
/// 0 0 InF 0
/// 0 0 F 0
/// ...
/// ```
///
/// Each pass line is `device microbatch kind chunk`, listed device by device
/// in execution order. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProgram {
    pub method: Method,
    pub cfg: ModelConfig,
    pub devices: Vec<Vec<Pass>>,
}

impl DeviceProgram {
    pub fn passes(&self) -> impl Iterator<Item = &Pass> {
        self.devices.iter().flatten()
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        text.parse()
    }
}

pub(crate) fn format_config(cfg: &ModelConfig) -> String {
    format!(
        "b={} s={} h={} V={} L={} p={} n={}",
        cfg.b, cfg.s, cfg.h, cfg.v, cfg.l, cfg.p, cfg.n
    )
}

pub(crate) fn parse_config(fields: &[&str], line: usize) -> Result<ModelConfig> {
    let err = |msg: String| Error::Parse { line, msg };
    let mut cfg = ModelConfig { b: 0, s: 0, h: 0, v: 0, l: 0, p: 0, n: 0 };
    for field in fields {
        let (key, value) = field.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{field}`")))?;
        let value: usize = value.parse().map_err(|_| err(format!("bad number in `{field}`")))?;
        let slot = match key {
            "b" => &mut cfg.b,
            "s" => &mut cfg.s,
            "h" => &mut cfg.h,
            "V" | "v" => &mut cfg.v,
            "L" | "l" => &mut cfg.l,
            "p" => &mut cfg.p,
            "n" => &mut cfg.n,
            _ => return Err(err(format!("unknown config key `{key}`"))),
        };
        *slot = value;
    }
    cfg.validate().map_err(|e| err(e.to_string()))?;
    Ok(cfg)
}

impl fmt::Display for DeviceProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method {}", self.method)?;
        writeln!(f, "config {}", format_config(&self.cfg))?;
        for list in &self.devices {
            for p in list {
                writeln!(f, "{} {} {} {}", p.device, p.microbatch, p.kind, p.chunk)?;
            }
        }
        Ok(())
    }
}

impl FromStr for DeviceProgram {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut method = None;
        let mut cfg: Option<ModelConfig> = None;
        let mut devices: Vec<Vec<Pass>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line, msg };
            let fields: Vec<&str> = content.split_whitespace().collect();
            match fields[0] {
                "method" => {
                    let name = fields.get(1).ok_or_else(|| err("missing method name".into()))?;
                    method = Some(name.parse::<Method>().map_err(|e| err(e.to_string()))?);
                }
                "config" => {
                    let c = parse_config(&fields[1..], line)?;
                    devices = vec![Vec::new(); c.p];
                    cfg = Some(c);
                }
                _ => {
                    let c = cfg.ok_or_else(|| err("pass before config header".into()))?;
                    if fields.len() != 4 {
                        return Err(err(format!("expected 4 fields, got {}", fields.len())));
                    }
                    let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad number `{s}`")));
                    let device = num(fields[0])?;
                    let microbatch = num(fields[1])?;
                    let kind: PassKind = fields[2].parse().map_err(|_| err(format!("unknown pass kind `{}`", fields[2])))?;
                    let chunk = num(fields[3])?;
                    if device >= c.p {
                        return Err(err(format!("device {device} out of range for p={}", c.p)));
                    }
                    if microbatch >= c.n {
                        return Err(err(format!("microbatch {microbatch} out of range for n={}", c.n)));
                    }
                    devices[device].push(Pass { kind, device, microbatch, chunk });
                }
            }
        }
        let missing = |what: &str| Error::Parse { line: 0, msg: format!("missing {what} header") };
        Ok(DeviceProgram {
            method: method.ok_or_else(|| missing("method"))?,
            cfg: cfg.ok_or_else(|| missing("config"))?,
            devices,
        })
    }
}
