use fgn_core::synthdata::make_dataset;
use fgn_core::SystemConfig;
use serde::{Deserialize, Serialize};

use crate::args::GenDataArgs;
use crate::failure::{CliError, Context};
use crate::manifest::{sidecar, ManifestBuilder};
use crate::{default_out, load_config, num};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub system: SystemConfig,
    /// Retained frames after the burn-in.
    pub frames: usize,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            frames: 20_000,
            split_fractions: [0.8, 0.1, 0.1],
        }
    }
}

pub fn run(a: GenDataArgs) -> Result<(), CliError> {
    let mut cfg: GenDataConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.sites {
        cfg.system.sites = v;
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.seed {
        cfg.system.seed = v;
    }
    if let Some(v) = a.forcing {
        cfg.system.forcing = v;
    }
    if let Some(v) = a.noise_std {
        cfg.system.noise_std = v;
    }
    if let Some(v) = a.split {
        cfg.split_fractions = [v[0], v[1], v[2]];
    }
    let out = a.out.unwrap_or_else(|| default_out("dataset.fgnd"));
    let base = out.parent().unwrap_or(std::path::Path::new("")).to_path_buf();
    let mut manifest = ManifestBuilder::new("gen-data", cfg.system.seed, &cfg, &base)?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }

    let data = make_dataset(&cfg.system, cfg.frames, cfg.split_fractions)?;
    if !base.as_os_str().is_empty() {
        std::fs::create_dir_all(&base).context(base.display())?;
    }
    data.save(&out).context(out.display())?;
    manifest.output(&out)?;
    manifest.write(&sidecar(&out))?;

    println!("wrote {}", out.display());
    println!("frames {} sites {}", data.len(), data.sites());
    for (name, r) in [
        ("train", &data.splits.train),
        ("valid", &data.splits.valid),
        ("test", &data.splits.test),
    ] {
        println!("{name} {}..{}", r.start, r.end);
    }
    println!("mean {}", num(data.stats.mean));
    println!("std {}", num(data.stats.std));
    println!("residual_std {}", num(data.stats.residual_std));
    Ok(())
}
