//! Long-format CSV tables (`run_id, round, metric, value`) from run logs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ssfl_core::runlog::{self, RECORDS_FILE};
use ssfl_core::{DiversityValue, RoundRecord};

use super::Failure;

pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const DIVERSITY_FILE: &str = "diversity.csv";

fn run_id(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn load(dir: &Path) -> Result<Vec<RoundRecord>, Failure> {
    let records = runlog::read_records(&dir.join(RECORDS_FILE)).map_err(|e| Failure::new(5, e))?;
    if records.is_empty() {
        return Err(Failure::new(5, anyhow!("{} holds no records", dir.display())));
    }
    Ok(records)
}

fn diversity_cell(v: &DiversityValue) -> String {
    match v {
        DiversityValue::Value(x) => x.to_string(),
        DiversityValue::Flag(flag) => serde_json::to_value(flag).ok().and_then(|j| j.as_str().map(str::to_owned)).unwrap_or_default(),
    }
}

/// Writes one table per metric family. Every run contributes one row per
/// round and metric; unevaluated accuracy is an empty cell.
pub fn write_reports(runs: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let loaded = runs.iter().map(|d| Ok((run_id(d), load(d)?))).collect::<Result<Vec<_>, Failure>>()?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| Failure::new(1, e))?;
    let open = |name: &str| {
        csv::Writer::from_path(out.join(name))
            .with_context(|| format!("creating {name}"))
            .map_err(|e| Failure::new(1, e))
    };
    let (mut acc, mut loss, mut div) = (open(ACCURACY_FILE)?, open(LOSS_FILE)?, open(DIVERSITY_FILE)?);
    let header = ["run_id", "round", "metric", "value"];
    let io = |e: csv::Error| Failure::new(1, e);
    for w in [&mut acc, &mut loss, &mut div] {
        w.write_record(header).map_err(io)?;
    }
    for (id, records) in &loaded {
        for r in records {
            let round = r.round.to_string();
            let accuracy = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            acc.write_record([id.as_str(), &round, "test_accuracy", &accuracy]).map_err(io)?;
            for (metric, value) in [
                ("mean_user_loss", r.mean_user_loss),
                ("server_loss", r.server_loss),
                ("pseudo_label_rate", r.pseudo_label_rate),
                ("lr", r.lr),
            ] {
                loss.write_record([id.as_str(), &round, metric, &value.to_string()]).map_err(io)?;
            }
            for (name, value) in &r.diversity {
                div.write_record([id.as_str(), &round, name, &diversity_cell(value)]).map_err(io)?;
            }
        }
    }
    for w in [&mut acc, &mut loss, &mut div] {
        w.flush().context("flushing CSV").map_err(|e| Failure::new(1, e))?;
    }
    println!("wrote {} runs to {}", loaded.len(), out.display());
    Ok(())
}
