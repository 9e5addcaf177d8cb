//! `blindsr solve`: restore a single observation or a whole manifest.

use crate::config::{FileConfig, SolveConfig};
use crate::util::{pool, write_atomic, write_png_atomic};
use crate::{CliError, SolveArgs};
use blindsr::degrade::read_manifest;
use blindsr::gem::{solve_blind, solve_nonblind, GemState};
use blindsr::io::read_png;
use blindsr::kernel::{make_mixture_kernel, BandwidthVector};
use blindsr::rng::derive_seed;
use blindsr::tensor::ImageTensor;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

pub fn run(args: &SolveArgs, file: &FileConfig, seed: u64, jobs: usize) -> Result<(), CliError> {
    let cfg = SolveConfig::merge(args, file, seed, jobs)?;
    if args.print_config {
        return crate::config::print_effective(&cfg);
    }
    let b2 = args
        .b2
        .as_ref()
        .map(|v| BandwidthVector::new(v.clone()))
        .transpose()
        .map_err(|e| CliError::Usage(format!("bad --b2: {e}")))?;
    match (&args.lr, &args.manifest) {
        (Some(lr), None) => solve_single(args, &cfg, lr, b2.as_ref()),
        (None, Some(manifest)) => solve_manifest(args, &cfg, manifest, b2.as_ref()),
        (None, None) => Err(CliError::Usage("solve needs --lr or --manifest".into())),
        (Some(_), Some(_)) => unreachable!("clap rejects --lr with --manifest"),
    }
}

/// Output bundle of one restoration.
struct Solved {
    x_hat: ImageTensor,
    /// Squared bandwidths the kernel artifact is built from: the supplied
    /// ones when solving nonblind, otherwise the posterior mean `1/λ̂`.
    b2: BandwidthVector,
    /// Bound trace of the blind solver; empty for nonblind runs.
    trace_csv: String,
}

fn solve_one(y: &ImageTensor, cfg: &SolveConfig, b2: Option<&BandwidthVector>, seed: u64) -> Result<Solved, CliError> {
    let gem_cfg = cfg.gem(seed)?;
    match b2 {
        Some(b2) => {
            let x_hat = solve_nonblind(y, b2, &gem_cfg)?;
            Ok(Solved {
                x_hat,
                b2: b2.clone(),
                trace_csv: trace_csv(None),
            })
        }
        None => {
            let state = solve_blind(y, &gem_cfg)?;
            let mean_b2: Vec<f64> = (0..state.lambda_hat.len())
                .map(|l| 1.0 / state.lambda_hat.get(l))
                .collect();
            let b2 = BandwidthVector::new(mean_b2).map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(Solved {
                x_hat: state.x_hat.clone(),
                b2,
                trace_csv: trace_csv(Some(&state)),
            })
        }
    }
}

/// One row per completed half-step, E and M phases alternating.
fn trace_csv(state: Option<&GemState>) -> String {
    let mut out = String::from("outer,phase,elbo,data_term,kl_term\n");
    if let Some(state) = state {
        for (i, est) in state.elbo_trace.iter().enumerate() {
            let phase = if i % 2 == 0 { "e" } else { "m" };
            writeln!(
                out,
                "{},{phase},{},{},{}",
                i / 2 + 1,
                est.value,
                est.data_term,
                est.kl_term
            )
            .expect("string write");
        }
    }
    out
}

fn write_outputs(
    solved: &Solved,
    support: usize,
    out: &Path,
    kernel_out: Option<&Path>,
    trace: Option<&Path>,
) -> Result<(), CliError> {
    write_png_atomic(out, &solved.x_hat)?;
    if let Some(path) = kernel_out {
        let kernel = make_mixture_kernel(&solved.b2, support)?;
        write_atomic(path, kernel.to_text().as_bytes())?;
    }
    if let Some(path) = trace {
        write_atomic(path, solved.trace_csv.as_bytes())?;
    }
    Ok(())
}

fn solve_single(
    args: &SolveArgs,
    cfg: &SolveConfig,
    lr: &Path,
    b2: Option<&BandwidthVector>,
) -> Result<(), CliError> {
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("solve --lr needs --out".into()))?;
    let y = read_png(lr)?;
    let solved = solve_one(&y, cfg, b2, derive_seed(cfg.seed, "solve"))?;
    write_outputs(
        &solved,
        cfg.support,
        out,
        args.kernel_out.as_deref(),
        args.trace.as_deref(),
    )?;
    println!("restored {} -> {}", lr.display(), out.display());
    Ok(())
}

fn solve_manifest(
    args: &SolveArgs,
    cfg: &SolveConfig,
    manifest: &Path,
    b2: Option<&BandwidthVector>,
) -> Result<(), CliError> {
    let out_dir = args
        .out_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("solve --manifest needs --out-dir".into()))?;
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));

    let workers = pool(cfg.jobs)?;
    let results: Vec<(String, Result<(), CliError>)> = workers.install(|| {
        records
            .par_iter()
            .map(|rec| {
                let result = read_png(&base.join(&rec.lr_path))
                    .map_err(CliError::from)
                    .and_then(|y| solve_one(&y, cfg, b2, derive_seed(cfg.seed, &format!("solve/{}", rec.id))))
                    .and_then(|solved| {
                        write_outputs(
                            &solved,
                            cfg.support,
                            &out_dir.join("sr").join(format!("{}.png", rec.id)),
                            Some(&out_dir.join("kernels").join(format!("{}.txt", rec.id))),
                            Some(&out_dir.join("traces").join(format!("{}.csv", rec.id))),
                        )
                    });
                (rec.id.clone(), result)
            })
            .collect()
    });

    let mut failed = 0usize;
    for (id, result) in &results {
        if let Err(e) = result {
            failed += 1;
            log::error!("record {id}: {}", e.message());
        }
    }
    println!("restored {}/{} records -> {}", results.len() - failed, results.len(), out_dir.display());
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} records failed",
            results.len()
        )));
    }
    Ok(())
}
