//! Experiment inputs. A config is read from TOML or from `key = value`
//! lines; the same keys work as CLI flags and as `CDAG_<KEY>` environment
//! variables.

use serde::{Deserialize, Serialize};

use crate::colosseum::AdversarySpec;
use crate::error::ConfigError;
use crate::ledger::{compute_delta, BLOCK_HEADER_BYTES};
use crate::time::SimTime;

/// Prefix for environment overrides, e.g. `CDAG_TAU_S=15`.
pub const ENV_PREFIX: &str = "CDAG_";

/// Default bucket count per expected proposer: 40 buckets for 18 proposers.
pub const DEFAULT_BUCKET_RATIO: f64 = 40.0 / 18.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of nodes.
    pub n: u32,
    /// Wins needed to propose.
    pub alpha: u32,
    /// Keeper replication factor.
    pub k: u32,
    /// Slot length in seconds.
    pub tau_s: f64,
    /// Transaction buckets; 0 derives `ceil(bucket_ratio * delta)`.
    pub buckets: u32,
    pub bucket_ratio: f64,
    /// Full confirmations required.
    pub f_min: u32,
    pub block_bytes: u64,
    /// Per-node uplink.
    pub bandwidth_bps: u64,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    /// Bytes per transaction. 350 B puts 2500 to 3000 txs in 1 MB.
    pub tx_bytes: u32,
    /// Network-wide transactions per second; 0 matches block capacity.
    pub tx_rate: f64,
    /// How long a new transaction takes to reach every pool.
    pub tx_delay_ms: u64,
    /// Share of transactions that double-spend an earlier one.
    pub double_spend_rate: f64,
    pub malicious: Vec<AdversarySpec>,
    /// Tournaments measured. The run continues a few more so blocks from the
    /// last ones can settle.
    pub slots: u32,
    pub seed: u64,
    /// Bound on each node's constant clock offset.
    pub skew_ms: u64,
    /// Extra certificate delay per slot, in parts per million of tau.
    pub drift_ppm: u64,
    /// Pairing deadline per round, as a fraction of tau.
    pub pairing_timeout: f64,
    /// Wait for a validator's answer, as a fraction of tau.
    pub validator_timeout: f64,
    /// Extra delay added by a delaying validator, as a fraction of tau.
    pub validator_delay: f64,
    /// Probes per round before giving up; 0 probes every other node.
    pub probe_budget: u32,
    /// Table preset this config came from (1, 2 or 3), 0 for custom.
    pub config: u8,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 64,
            alpha: 3,
            k: 16,
            tau_s: 20.0,
            buckets: 0,
            bucket_ratio: DEFAULT_BUCKET_RATIO,
            f_min: 3,
            block_bytes: 1_000_000,
            bandwidth_bps: 25_000_000,
            latency_min_ms: 20,
            latency_max_ms: 100,
            tx_bytes: 350,
            tx_rate: 0.0,
            tx_delay_ms: 250,
            double_spend_rate: 0.0,
            malicious: Vec::new(),
            slots: 30,
            seed: 1,
            skew_ms: 500,
            drift_ppm: 0,
            pairing_timeout: 0.15,
            validator_timeout: 0.10,
            validator_delay: 0.2,
            probe_budget: 0,
            config: 1,
        }
    }
}

/// `(key, help)` for every config key, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("n", "number of nodes"),
    ("alpha", "wins needed to propose"),
    ("k", "keeper replication factor"),
    ("tau_s", "slot length in seconds"),
    ("buckets", "transaction buckets, 0 derives from bucket_ratio"),
    ("bucket_ratio", "buckets per expected proposer when buckets = 0"),
    ("f_min", "full confirmations required"),
    ("block_bytes", "maximum block size in bytes"),
    ("bandwidth_bps", "per-node uplink in bits per second"),
    ("latency_min_ms", "lowest one-way link latency"),
    ("latency_max_ms", "highest one-way link latency"),
    ("tx_bytes", "bytes per transaction"),
    ("tx_rate", "network-wide tx/s, 0 matches block capacity"),
    ("tx_delay_ms", "time for a transaction to reach every pool"),
    ("double_spend_rate", "share of transactions that double-spend"),
    ("malicious", "adversaries, role:who:modes separated by ';'"),
    ("slots", "tournaments measured"),
    ("seed", "run seed"),
    ("skew_ms", "bound on per-node clock offset"),
    ("drift_ppm", "per-slot certificate delay in ppm of tau"),
    ("pairing_timeout", "pairing deadline as a fraction of tau"),
    ("validator_timeout", "validator wait as a fraction of tau"),
    (
        "validator_delay",
        "delaying validator's extra wait as a fraction of tau",
    ),
    ("probe_budget", "probes per round, 0 for every node"),
    ("config", "preset label 1, 2 or 3, 0 for custom"),
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError::Parse(format!("{key} = {v:?}")))
}

impl SimConfig {
    /// Block size and slot length of the three table configurations.
    pub fn preset(config: u8) -> Result<(u64, f64), ConfigError> {
        match config {
            1 => Ok((1_000_000, 20.0)),
            2 => Ok((750_000, 15.0)),
            3 => Ok((500_000, 10.0)),
            _ => Err(ConfigError::Invalid(format!("no preset {config}"))),
        }
    }

    pub fn with_preset(mut self, config: u8) -> Result<Self, ConfigError> {
        let (bytes, tau) = Self::preset(config)?;
        self.block_bytes = bytes;
        self.tau_s = tau;
        self.config = config;
        Ok(self)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "n" => self.n = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "tau_s" => self.tau_s = parse(key, v)?,
            "buckets" => self.buckets = parse(key, v)?,
            "bucket_ratio" => self.bucket_ratio = parse(key, v)?,
            "f_min" => self.f_min = parse(key, v)?,
            "block_bytes" => self.block_bytes = parse(key, v)?,
            "bandwidth_bps" => self.bandwidth_bps = parse(key, v)?,
            "latency_min_ms" => self.latency_min_ms = parse(key, v)?,
            "latency_max_ms" => self.latency_max_ms = parse(key, v)?,
            "tx_bytes" => self.tx_bytes = parse(key, v)?,
            "tx_rate" => self.tx_rate = parse(key, v)?,
            "tx_delay_ms" => self.tx_delay_ms = parse(key, v)?,
            "double_spend_rate" => self.double_spend_rate = parse(key, v)?,
            "malicious" => {
                self.malicious = v
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_, _>>()?
            }
            "slots" => self.slots = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "skew_ms" => self.skew_ms = parse(key, v)?,
            "drift_ppm" => self.drift_ppm = parse(key, v)?,
            "pairing_timeout" => self.pairing_timeout = parse(key, v)?,
            "validator_timeout" => self.validator_timeout = parse(key, v)?,
            "validator_delay" => self.validator_delay = parse(key, v)?,
            "probe_budget" => self.probe_budget = parse(key, v)?,
            "config" => self.config = parse(key, v)?,
            _ => return Err(ConfigError::Parse(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(format!("line {}: expected key = value", i + 1)))?;
            let v = v.trim().trim_matches('"');
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// TOML if it parses as TOML, `key = value` lines otherwise.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        match Self::from_toml(text) {
            Ok(c) => Ok(c),
            Err(toml_err) => {
                let mut c = SimConfig::default();
                c.apply_kv(text).map_err(|kv_err| {
                    ConfigError::Parse(format!("not TOML ({toml_err}) nor key = value ({kv_err})"))
                })?;
                Ok(c)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies every `CDAG_<KEY>` variable found through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for (key, _) in KEYS {
            if let Some(v) = lookup(&format!("{ENV_PREFIX}{}", key.to_uppercase())) {
                self.set(key, &v)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 4 {
            return Err(ConfigError::Invalid(format!("n = {} is below 4", self.n)));
        }
        if self.alpha < 1 || self.alpha >= 32 || 1u64 << self.alpha >= self.n as u64 {
            return Err(ConfigError::Alpha {
                n: self.n,
                alpha: self.alpha,
            });
        }
        if self.k == 0 || self.k >= self.n {
            return Err(ConfigError::Keepers { n: self.n, k: self.k });
        }
        if !(self.tau_s > 0.0 && self.tau_s.is_finite()) {
            return Err(ConfigError::NonPositive("tau_s"));
        }
        if self.bandwidth_bps == 0 {
            return Err(ConfigError::NonPositive("bandwidth_bps"));
        }
        if self.slots == 0 {
            return Err(ConfigError::NonPositive("slots"));
        }
        if self.tx_bytes == 0 {
            return Err(ConfigError::NonPositive("tx_bytes"));
        }
        if self.f_min == 0 {
            return Err(ConfigError::NonPositive("f_min"));
        }
        if self.buckets == 0 && !(self.bucket_ratio > 0.0 && self.bucket_ratio.is_finite()) {
            return Err(ConfigError::NonPositive("bucket_ratio"));
        }
        if self.block_bytes < BLOCK_HEADER_BYTES + self.tx_bytes as u64 {
            return Err(ConfigError::Invalid(format!(
                "block_bytes = {} cannot hold a header and one transaction",
                self.block_bytes
            )));
        }
        if self.latency_min_ms > self.latency_max_ms {
            return Err(ConfigError::Invalid("latency_min_ms exceeds latency_max_ms".into()));
        }
        if !(self.tx_rate >= 0.0 && self.tx_rate.is_finite()) {
            return Err(ConfigError::Invalid("tx_rate must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.double_spend_rate) {
            return Err(ConfigError::Invalid("double_spend_rate outside [0, 1]".into()));
        }
        for (name, f) in [
            ("pairing_timeout", self.pairing_timeout),
            ("validator_timeout", self.validator_timeout),
            ("validator_delay", self.validator_delay),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(ConfigError::Invalid(format!("{name} = {f} outside (0, 1)")));
            }
        }
        for a in &self.malicious {
            a.validate(self.n)?;
        }
        Ok(())
    }

    pub fn tau(&self) -> SimTime {
        SimTime::from_secs_f64(self.tau_s)
    }

    pub fn delta(&self) -> u64 {
        compute_delta(self.n as u64, self.alpha).expect("validated")
    }

    pub fn bucket_count(&self) -> u32 {
        if self.buckets > 0 {
            self.buckets
        } else {
            ((self.bucket_ratio * self.delta() as f64).ceil() as u32).max(1)
        }
    }

    /// Transactions that fit one block.
    pub fn txs_per_block(&self) -> u64 {
        (self.block_bytes - BLOCK_HEADER_BYTES) / self.tx_bytes as u64
    }

    pub fn effective_tx_rate(&self) -> f64 {
        if self.tx_rate > 0.0 {
            self.tx_rate
        } else {
            self.delta() as f64 * self.txs_per_block() as f64 / self.tau_s
        }
    }

    /// Extra slots run after the measured ones.
    pub fn drain_slots(&self) -> u32 {
        self.f_min + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.delta(), 8);
        assert_eq!(c.bucket_count(), 18);
        assert_eq!(c.txs_per_block(), 2855);
        let mut large = c.clone();
        large.n = 300;
        large.alpha = 4;
        assert_eq!(large.bucket_count(), 40);
    }

    #[test]
    fn presets() {
        let c = SimConfig::default().with_preset(2).unwrap();
        assert_eq!((c.block_bytes, c.tau_s, c.config), (750_000, 15.0, 2));
        assert_eq!(SimConfig::preset(3).unwrap(), (500_000, 10.0));
        assert!(SimConfig::preset(4).is_err());
    }

    #[test]
    fn validation_errors() {
        let with = |f: fn(&mut SimConfig)| {
            let mut c = SimConfig::default();
            f(&mut c);
            c.validate()
        };
        assert_eq!(with(|c| c.alpha = 6), Err(ConfigError::Alpha { n: 64, alpha: 6 }));
        assert_eq!(with(|c| c.alpha = 0), Err(ConfigError::Alpha { n: 64, alpha: 0 }));
        assert!(with(|c| c.alpha = 5).is_ok());
        assert_eq!(with(|c| c.k = 64), Err(ConfigError::Keepers { n: 64, k: 64 }));
        assert_eq!(with(|c| c.tau_s = 0.0), Err(ConfigError::NonPositive("tau_s")));
        assert!(with(|c| c.block_bytes = 600).is_err());
        assert!(with(|c| c.double_spend_rate = 1.5).is_err());
        assert!(with(|c| c.latency_min_ms = 500).is_err());
        assert!(with(|c| c.malicious = vec!["keeper:0.2:9".parse().unwrap()]).is_err());
    }

    #[test]
    fn kv_and_toml_agree() {
        let kv = "n = 32\nalpha=2 # comment\nmalicious = validator:0.2:1;keeper:0.2:1+2\ntau_s = 15\n";
        let a = SimConfig::from_text(kv).unwrap();
        assert_eq!((a.n, a.alpha, a.tau_s, a.malicious.len()), (32, 2, 15.0, 2));
        let b = SimConfig::from_text(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert!(SimConfig::from_text("bogus = 1").is_err());
        assert!(SimConfig::from_text("n = lots").is_err());
    }

    #[test]
    fn every_key_is_settable_and_serialized() {
        let toml = SimConfig::default().to_toml();
        for (key, _) in KEYS {
            assert!(toml.contains(&format!("{key} =")), "{key} missing from TOML");
            let mut c = SimConfig::default();
            let v = match *key {
                "malicious" => "player:#1:1",
                k if k.ends_with("timeout") || k == "validator_delay" || k.contains("rate") || k == "bucket_ratio" => {
                    "0.5"
                }
                _ => "7",
            };
            c.set(key, v).unwrap();
            assert_ne!(c, SimConfig::default(), "{key}");
        }
    }

    #[test]
    fn env_overrides() {
        let mut c = SimConfig::default();
        c.apply_env(|k| match k {
            "CDAG_N" => Some("128".into()),
            "CDAG_SEED" => Some("9".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((c.n, c.seed), (128, 9));
    }
}
