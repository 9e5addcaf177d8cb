//! `blindsr eval`: pair restored and ground-truth images by file stem and
//! score PSNR and SSIM on the luma channel.

use crate::util::{pool, write_atomic};
use crate::{CliError, EvalArgs};
use blindsr::color::rgb_to_y;
use blindsr::io::read_png;
use blindsr::metrics::{psnr, ssim};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// PNG paths of a directory keyed by file stem.
fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut map = BTreeMap::new();
    for path in crate::synth::png_files(dir)? {
        if let Some(stem) = path.file_stem() {
            map.insert(stem.to_string_lossy().into_owned(), path.clone());
        }
    }
    Ok(map)
}

pub fn run(args: &EvalArgs, jobs: usize) -> Result<(), CliError> {
    let sr = stems(&args.sr_dir)?;
    let hr = stems(&args.hr_dir)?;
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = sr
        .iter()
        .filter_map(|(stem, sr_path)| hr.get(stem).map(|hr_path| (stem, sr_path, hr_path)))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Runtime(format!(
            "no matching image stems between {} and {}",
            args.sr_dir.display(),
            args.hr_dir.display()
        )));
    }

    let workers = pool(jobs)?;
    let rows: Vec<Result<(String, f64, f64), CliError>> = workers.install(|| {
        pairs
            .par_iter()
            .map(|(stem, sr_path, hr_path)| {
                let a = rgb_to_y(&read_png(sr_path)?)?;
                let b = rgb_to_y(&read_png(hr_path)?)?;
                Ok(((*stem).clone(), psnr(&a, &b)?, ssim(&a, &b)?))
            })
            .collect()
    });

    // the summary averages the values as written, so it is exactly the mean
    // of the table's rows
    let round6 = |v: f64| (v * 1e6).round() / 1e6;
    let mut csv = String::from("id,psnr,ssim\n");
    let mut sum_psnr = 0.0;
    let mut sum_ssim = 0.0;
    for row in &rows {
        let (stem, p, s) = match row {
            Ok(v) => v,
            Err(e) => return Err(CliError::Runtime(e.message().into())),
        };
        let (p, s) = (round6(*p), round6(*s));
        writeln!(csv, "{stem},{p:.6},{s:.6}").expect("string write");
        sum_psnr += p;
        sum_ssim += s;
    }
    write_atomic(&args.out, csv.as_bytes())?;
    let n = rows.len() as f64;
    println!(
        "images={} mean_psnr={:.6} mean_ssim={:.6}",
        rows.len(),
        sum_psnr / n,
        sum_ssim / n
    );
    Ok(())
}
