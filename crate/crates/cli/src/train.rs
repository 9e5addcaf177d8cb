//! `blindsr train`: fit the bandwidth predictor and restorer ridge.

use crate::config::{FileConfig, TrainCliConfig};
use crate::util::write_atomic;
use crate::{CliError, TrainArgs};
use blindsr::degrade::read_manifest;
use blindsr::estimator::{
    train, EstimatorParams, LabeledSample, LossWeights, TrainConfig, TrainSet,
};
use blindsr::io::read_png;
use blindsr::kernel::{ExponentialParams, MixtureKernel};
use blindsr::rng::derive_seed;
use std::fmt::Write as _;
use std::path::Path;

/// Loads a manifest's records as training samples. Records with an HR image
/// become labeled samples (with their kernel when available); the rest only
/// contribute their observation.
fn load_manifest(path: &Path, strip_labels: bool) -> Result<TrainSet, CliError> {
    let records = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut set = TrainSet::default();
    for rec in &records {
        let lr = read_png(&base.join(&rec.lr_path))?;
        match (&rec.hr_path, strip_labels) {
            (Some(hr_path), false) => {
                let hr = read_png(&base.join(hr_path))?;
                let kernel = rec
                    .kernel_path
                    .as_ref()
                    .map(|p| MixtureKernel::read_text_file(&base.join(p)))
                    .transpose()?;
                set.labeled.push(LabeledSample { hr, lr, kernel });
            }
            _ => set.unlabeled.push(lr),
        }
    }
    Ok(set)
}

pub fn run(args: &TrainArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let cfg = TrainCliConfig::merge(args, file, seed)?;
    if args.print_config {
        return crate::config::print_effective(&cfg);
    }
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("train needs --out".into()))?;
    if args.manifest.is_none() && args.unlabeled.is_none() {
        return Err(CliError::Usage(
            "train needs --manifest and/or --unlabeled".into(),
        ));
    }

    let mut data = TrainSet::default();
    if let Some(path) = &args.manifest {
        let loaded = load_manifest(path, false)?;
        data.labeled.extend(loaded.labeled);
        data.unlabeled.extend(loaded.unlabeled);
    }
    if let Some(path) = &args.unlabeled {
        let loaded = load_manifest(path, true)?;
        data.unlabeled.extend(loaded.unlabeled);
    }

    let weights = LossWeights {
        alpha_g: cfg.alpha_g,
        alpha_r: cfg.alpha_r,
    };
    let prior = ExponentialParams::uniform(cfg.rate, cfg.components)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let deg = cfg.degradation(derive_seed(seed, "train"))?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: derive_seed(seed, "train"),
        n_mc: cfg.n_mc,
        fd_step: cfg.fd_step,
        ..TrainConfig::default()
    };
    let init = EstimatorParams::init(cfg.components, cfg.support, cfg.restore_iters)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let outcome = train(&data, &weights, &prior, &deg, &tcfg, init).map_err(|e| match e {
        blindsr::Error::Numerical(msg) => CliError::Divergence(msg),
        other => CliError::Runtime(other.to_string()),
    })?;

    write_atomic(out, outcome.params.to_json()?.as_bytes())?;
    if let Some(curve_path) = &args.curve {
        let mut csv = String::from("epoch,loss\n");
        for (epoch, loss) in outcome.curve.iter().enumerate() {
            writeln!(csv, "{epoch},{loss}").expect("string write");
        }
        write_atomic(curve_path, csv.as_bytes())?;
    }

    match outcome.curve.last() {
        Some(loss) => println!(
            "eta={} epochs={} final_loss={loss}",
            outcome.eta,
            outcome.curve.len()
        ),
        None => println!("eta={} epochs=0 final_loss=nan", outcome.eta),
    }
    Ok(())
}
