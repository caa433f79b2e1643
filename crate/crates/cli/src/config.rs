//! TOML experiment configuration with desk/paper size profiles.

use anyhow::{bail, Context, Result};
use bmdr_core::channel::{default_power_range_db, System, UserConfig};
use bmdr_core::cnn::{LossMode, TrainConfig};
use bmdr_core::detect::DetectorSpec;
use bmdr_core::modem::build_qam;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => bail!("unknown profile '{other}' (expected desk or paper)"),
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub system: Option<SystemSection>,
    pub channels: Option<ChannelSection>,
    pub dataset: Option<DatasetSection>,
    pub train: Option<TrainSection>,
    pub cer: Option<CerSection>,
    pub snr_table: Option<SnrTableSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_r: usize,
    pub users: Vec<UserSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub n_t: usize,
    /// Bits per symbol: 2, 4, or 6.
    pub qam: usize,
    pub rho_range_db: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Stratified set size (profile default when absent).
    pub count: Option<usize>,
    /// Candidate pool size as a multiple of `count`.
    pub pool_factor: Option<usize>,
    pub strat_low_db: Option<f64>,
    pub strat_high_db: Option<f64>,
    pub bins: Option<usize>,
    /// Keep a partial selection when bins cannot be filled.
    pub lenient: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_p: Option<usize>,
    pub n_samp: Option<usize>,
    pub detector: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    /// "normalized" or "absolute"; auto-falls back to absolute on zero labels.
    pub loss: Option<String>,
    pub split: Option<[f64; 3]>,
    pub user: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CerSection {
    pub detectors: Option<Vec<String>>,
    pub rho_grid_db: Option<Vec<f64>>,
    pub n_codewords: Option<usize>,
    pub bp_max_iters: Option<usize>,
    pub bmdr_n_samp: Option<usize>,
    /// Path to an alist file; the built-in (648,432) code when absent.
    pub code_alist: Option<String>,
    pub interleaver_seed: Option<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SnrTableSection {
    pub grid_lo_db: Option<f64>,
    pub grid_hi_db: Option<f64>,
    pub grid_step_db: Option<f64>,
    pub n_samp: Option<usize>,
}

/// Configuration after profile resolution and validation.
pub struct Resolved {
    pub seed: u64,
    pub profile: Profile,
    pub system: System,
    pub config_hash: String,

    pub channel_count: usize,
    pub pool_factor: usize,
    pub strat_low_db: f64,
    pub strat_high_db: f64,
    pub bins: usize,
    pub lenient: bool,

    pub n_p: usize,
    pub n_samp: usize,
    pub detector: DetectorSpec,

    pub train: TrainConfig,
    pub split: (f64, f64, f64),
    pub train_user: usize,

    pub cer_detectors: Vec<DetectorSpec>,
    pub cer_rho_grid_db: Vec<f64>,
    pub cer_n_codewords: usize,
    pub cer_bp_max_iters: usize,
    pub cer_bmdr_n_samp: usize,
    pub cer_code_alist: Option<String>,
    pub cer_interleaver_seed: u64,

    pub table_grid: Vec<f64>,
    pub table_n_samp: usize,
}

pub fn load(
    path: Option<&Path>,
    seed_override: Option<u64>,
    profile_override: Option<Profile>,
) -> Result<Resolved> {
    let (file, raw_text) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            let parsed: FileConfig = toml::from_str(&text)
                .with_context(|| format!("cannot parse config {}", p.display()))?;
            (parsed, text)
        }
        None => (FileConfig::default(), String::new()),
    };
    resolve(file, raw_text, seed_override, profile_override)
}

fn resolve(
    file: FileConfig,
    raw_text: String,
    seed_override: Option<u64>,
    profile_override: Option<Profile>,
) -> Result<Resolved> {
    let profile = match profile_override {
        Some(p) => p,
        None => match &file.profile {
            Some(s) => s.parse()?,
            None => Profile::Desk,
        },
    };
    let seed = seed_override.or(file.seed).unwrap_or(0);

    // System; a 16x4 single-antenna 4-QAM setup when unspecified.
    let system = match &file.system {
        Some(sec) => {
            if sec.users.is_empty() {
                bail!("config: [system] lists no users");
            }
            let users = sec
                .users
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    let constellation = build_qam(u.qam).with_context(|| {
                        format!("config: [system.users][{i}] has unsupported qam={}", u.qam)
                    })?;
                    let rho_range_db = match u.rho_range_db {
                        Some([lo, hi]) => (lo, hi),
                        None => default_power_range_db(u.qam),
                    };
                    Ok(UserConfig { n_t: u.n_t, constellation, rho_range_db })
                })
                .collect::<Result<Vec<_>>>()?;
            System::new(sec.n_r, users).context("config: [system] is inconsistent")?
        }
        None => System::new(
            16,
            (0..4)
                .map(|_| UserConfig {
                    n_t: 1,
                    constellation: build_qam(2).unwrap(),
                    rho_range_db: default_power_range_db(2),
                })
                .collect(),
        )
        .unwrap(),
    };

    let (count_dflt, n_p_dflt, n_samp_dflt, cw_dflt, table_dflt) = match profile {
        Profile::Desk => (2000, 20, 200, 500, 20_000),
        Profile::Paper => (10_000, 50, 500, 10_000, 200_000),
    };

    let ch = file.channels.unwrap_or_default();
    let ds = file.dataset.unwrap_or_default();
    let tr = file.train.unwrap_or_default();
    let cer = file.cer.unwrap_or_default();
    let tab = file.snr_table.unwrap_or_default();

    let detector: DetectorSpec = ds
        .detector
        .as_deref()
        .unwrap_or("kbest:K=32")
        .parse()
        .map_err(|e| anyhow::anyhow!("config: [dataset].detector: {e}"))?;

    let split_arr = tr.split.unwrap_or([0.8, 0.1, 0.1]);
    let split = (split_arr[0], split_arr[1], split_arr[2]);
    let loss_mode = match tr.loss.as_deref() {
        None | Some("normalized") => LossMode::Normalized,
        Some("absolute") => LossMode::Absolute,
        Some(other) => bail!("config: [train].loss '{other}' (expected normalized|absolute)"),
    };
    let train = TrainConfig {
        batch_size: tr.batch_size.unwrap_or(256),
        learning_rate: tr.learning_rate.unwrap_or(1e-3),
        max_epochs: tr.max_epochs.unwrap_or(200),
        patience: tr.patience.unwrap_or(10),
        seed,
        loss_mode,
        ..TrainConfig::default()
    };

    let cer_detectors = cer
        .detectors
        .unwrap_or_else(|| vec!["lmmse".into(), "kbest:K=32".into()])
        .iter()
        .map(|s| {
            s.parse::<DetectorSpec>()
                .map_err(|e| anyhow::anyhow!("config: [cer].detectors: {e}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let strat_low_db = ch.strat_low_db.unwrap_or(0.0);
    let strat_high_db = ch.strat_high_db.unwrap_or(25.0);
    if strat_low_db >= strat_high_db {
        bail!("config: [channels] stratification range is empty");
    }

    let (lo, hi, step) = (
        tab.grid_lo_db.unwrap_or(-20.0),
        tab.grid_hi_db.unwrap_or(40.0),
        tab.grid_step_db.unwrap_or(0.5),
    );
    if step <= 0.0 || lo >= hi {
        bail!("config: [snr_table] grid is invalid");
    }
    let mut table_grid = Vec::new();
    let mut x = lo;
    while x <= hi + 1e-9 {
        table_grid.push(x);
        x += step;
    }

    let mut hasher = Sha256::new();
    hasher.update(raw_text.as_bytes());
    hasher.update(seed.to_le_bytes());
    let config_hash = hex16(&hasher.finalize());

    Ok(Resolved {
        seed,
        profile,
        system,
        config_hash,
        channel_count: ch.count.unwrap_or(count_dflt),
        pool_factor: ch.pool_factor.unwrap_or(10),
        strat_low_db,
        strat_high_db,
        bins: ch.bins.unwrap_or(25),
        lenient: ch.lenient.unwrap_or(true),
        n_p: ds.n_p.unwrap_or(n_p_dflt),
        n_samp: ds.n_samp.unwrap_or(n_samp_dflt),
        detector,
        train,
        split,
        train_user: tr.user.unwrap_or(0),
        cer_detectors,
        cer_rho_grid_db: cer
            .rho_grid_db
            .unwrap_or_else(|| (-6..=8).step_by(2).map(|x| x as f64).collect()),
        cer_n_codewords: cer.n_codewords.unwrap_or(cw_dflt),
        cer_bp_max_iters: cer.bp_max_iters.unwrap_or(50),
        cer_bmdr_n_samp: cer.bmdr_n_samp.unwrap_or(200),
        cer_code_alist: cer.code_alist,
        cer_interleaver_seed: cer.interleaver_seed.unwrap_or(7),
        table_grid,
        table_n_samp: tab.n_samp.unwrap_or(table_dflt),
    })
}

fn hex16(digest: &[u8]) -> String {
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let r = resolve(FileConfig::default(), String::new(), None, None).unwrap();
        assert_eq!(r.seed, 0);
        assert_eq!(r.profile, Profile::Desk);
        assert_eq!(r.system.n_r, 16);
        assert_eq!(r.system.n_users(), 4);
        assert_eq!(r.channel_count, 2000);
        assert_eq!(r.n_p, 20);
        assert_eq!(r.n_samp, 200);
    }

    #[test]
    fn paper_profile_sizes() {
        let file: FileConfig = toml::from_str("profile = \"paper\"").unwrap();
        let r = resolve(file, String::new(), None, None).unwrap();
        assert_eq!(r.channel_count, 10_000);
        assert_eq!(r.n_p, 50);
        assert_eq!(r.n_samp, 500);
        assert_eq!(r.cer_n_codewords, 10_000);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
seed = 9
[system]
n_r = 8
[[system.users]]
n_t = 2
qam = 4
rho_range_db = [-8.0, 0.0]
[[system.users]]
n_t = 1
qam = 2
[dataset]
detector = "lmmse"
n_p = 3
[train]
loss = "absolute"
split = [0.7, 0.1, 0.2]
[cer]
detectors = ["ml-exact"]
rho_grid_db = [0.0, 4.0]
"#;
        let file: FileConfig = toml::from_str(text).unwrap();
        let r = resolve(file, text.to_string(), None, None).unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.system.total_streams(), 3);
        assert_eq!(r.detector, DetectorSpec::Lmmse);
        assert_eq!(r.n_p, 3);
        assert_eq!(r.train.loss_mode, LossMode::Absolute);
        assert_eq!(r.cer_detectors, vec![DetectorSpec::MlExact]);
        assert_eq!(r.config_hash.len(), 16);
        // default power range fills in per constellation
        assert_eq!(r.system.users[1].rho_range_db, (-16.0, -6.0));
    }

    #[test]
    fn bad_configs_rejected() {
        // unknown key
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
        // inconsistent dims: N > n_r
        let text = r#"
[system]
n_r = 2
[[system.users]]
n_t = 3
qam = 2
"#;
        let file: FileConfig = toml::from_str(text).unwrap();
        assert!(resolve(file, text.into(), None, None).is_err());
        // bad qam
        let text = r#"
[system]
n_r = 4
[[system.users]]
n_t = 1
qam = 3
"#;
        let file: FileConfig = toml::from_str(text).unwrap();
        assert!(resolve(file, text.into(), None, None).is_err());
    }

    #[test]
    fn overrides_win() {
        let file: FileConfig = toml::from_str("seed = 1\nprofile = \"desk\"").unwrap();
        let r = resolve(file, String::new(), Some(99), Some(Profile::Paper)).unwrap();
        assert_eq!(r.seed, 99);
        assert_eq!(r.profile, Profile::Paper);
    }
}
