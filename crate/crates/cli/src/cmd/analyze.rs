use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use corrinit_core::correlation::{distance_profile, CorrelationProfile};
use corrinit_core::{LayerTensor, CSV_SCHEMA_LINE};
use serde::Serialize;

use crate::manifest::Outputs;
use crate::{CliError, CliResult};

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Layer tensor files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, default_value = "analyze")]
    pub tag: String,
}

pub fn run(args: &AnalyzeArgs, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let mut profiles = Vec::new();
    for path in &args.files {
        let tensor = LayerTensor::load(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let profile = distance_profile(&tensor)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().map_or_else(|| "layer".into(), |s| s.to_string_lossy().into_owned());
        println!("{} ({} skipped pairs)", path.display(), profile.skipped_pairs);
        for e in profile.entries.values() {
            println!("  d={:.4}  mean rho {:+.6}  pairs {}", e.distance, e.mean_pearson, e.n_pairs);
        }
        let mut csv = Vec::new();
        profile.write_csv(&mut csv)?;
        outputs.write(format!("{}.{}.profile.csv", args.tag, stem), &csv)?;
        profiles.push((stem, profile));
    }
    if profiles.len() > 1 {
        outputs.write(format!("{}.comparison.csv", args.tag), &comparison(&profiles)?)?;
    }
    Ok(serde_json::to_value(args)?)
}

/// One row per distance, one column per file; missing entries are empty.
fn comparison(profiles: &[(String, CorrelationProfile)]) -> CliResult<Vec<u8>> {
    let mut distances: BTreeMap<u32, f64> = BTreeMap::new();
    for (_, p) in profiles {
        for (sq, e) in &p.entries {
            distances.insert(*sq, e.distance);
        }
    }
    let mut buf = format!("{CSV_SCHEMA_LINE}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["distance".to_string()];
        header.extend(profiles.iter().map(|(name, _)| name.clone()));
        w.write_record(&header).map_err(csv_error)?;
        for (sq, d) in &distances {
            let mut row = vec![d.to_string()];
            row.extend(
                profiles
                    .iter()
                    .map(|(_, p)| p.entries.get(sq).map(|e| e.mean_pearson.to_string()).unwrap_or_default()),
            );
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}
