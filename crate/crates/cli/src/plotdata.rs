//! `plotdata` subcommand: collapse a results file into per-round curves,
//! one `[method, round, mean, sem]` row per method and round.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

const EXPECTED_HEADER: [&str; 5] = ["seed", "method", "round", "metric", "value"];

pub fn cmd_plotdata(results: &Path, metric: &str, out: &Path) -> Result<(), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(results)
        .map_err(|e| CliError::Io(format!("{}: {e}", results.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", results.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != EXPECTED_HEADER {
        return Err(CliError::Config(format!(
            "{}: expected header {:?}, found {header:?}",
            results.display(),
            EXPECTED_HEADER
        )));
    }

    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut seen_metric = false;
    for (i, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::Config(format!("{}: row {}: {e}", results.display(), i + 2)))?;
        let parse = |field: usize, name: &str| -> Result<&str, CliError> {
            record.get(field).ok_or_else(|| {
                CliError::Config(format!("row {}: missing column {name}", i + 2))
            })
        };
        let row_metric = parse(3, "metric")?;
        if row_metric != metric {
            continue;
        }
        seen_metric = true;
        let method = parse(1, "method")?.to_string();
        let round: usize = parse(2, "round")?
            .parse()
            .map_err(|e| CliError::Config(format!("row {}: round: {e}", i + 2)))?;
        let value: f64 = parse(4, "value")?
            .parse()
            .map_err(|e| CliError::Config(format!("row {}: value: {e}", i + 2)))?;
        groups.entry((method, round)).or_default().push(value);
    }
    if !seen_metric {
        return Err(CliError::Config(format!("unknown metric `{metric}`")));
    }

    let mut text = String::from("method,round,mean,sem\n");
    for ((method, round), values) in &groups {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = if n < 2 {
            0.0
        } else {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        text.push_str(&format!("{method},{round},{mean},{sem}\n"));
    }
    std::fs::write(out, text).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    Ok(())
}
