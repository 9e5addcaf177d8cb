//! `blindsr synth`: degrade a directory of HR images into a dataset.

use crate::config::{FileConfig, SynthConfig};
use crate::{CliError, SynthArgs};
use blindsr::degrade::synth_dataset;
use blindsr::kernel::ExponentialParams;
use blindsr::rng::derive_seed;
use std::path::{Path, PathBuf};

/// PNG files of a directory, sorted by name for a stable record order.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn run(args: &SynthArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let cfg = SynthConfig::merge(args, file, seed)?;
    if args.print_config {
        return crate::config::print_effective(&cfg);
    }
    let hr_dir = args
        .hr_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("synth needs --hr-dir".into()))?;
    let out_dir = args
        .out_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("synth needs --out-dir".into()))?;

    let paths = png_files(hr_dir)?;
    if paths.is_empty() {
        return Err(CliError::Runtime(format!(
            "no PNG files in {}",
            hr_dir.display()
        )));
    }
    let deg = cfg.degradation(derive_seed(seed, "synth"))?;
    let prior = ExponentialParams::uniform(cfg.rate, cfg.components)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let records = synth_dataset(&paths, out_dir, &deg, &prior)?;
    println!(
        "records={} manifest={}",
        records.len(),
        out_dir.join("manifest.jsonl").display()
    );
    Ok(())
}
