//! Markdown tables from a directory of run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

const STATS: [&str; 3] = ["Maximum v(t)", "Average v(t)", "Last day v(t)"];

/// Every file named `name` under `root`, in sorted path order.
fn find(root: &Path, name: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|f| f == name) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn label(root: &Path, file: &Path) -> String {
    let rel = file
        .parent()
        .and_then(|p| p.strip_prefix(root).ok())
        .map(|p| p.display().to_string());
    match rel.as_deref() {
        None | Some("") => ".".into(),
        Some(s) => s.into(),
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// One table per (range, arm), one column per dispersion run.
fn dispersion_tables(md: &mut String, runs: &[(String, Value)]) {
    let mut arms: Vec<String> = Vec::new();
    for (_, v) in runs {
        for a in v["arms"].as_array().into_iter().flatten() {
            let name = a["arm"].as_str().unwrap_or("?").to_string();
            if !arms.contains(&name) {
                arms.push(name);
            }
        }
    }
    for (src, title) in [("train", "In-sample"), ("evaluation", "Out-of-sample")] {
        for arm in &arms {
            let cols: Vec<(&String, &Value)> = runs
                .iter()
                .filter_map(|(name, v)| {
                    let a = v["arms"].as_array()?.iter().find(|a| a["arm"].as_str() == Some(arm))?;
                    Some((name, &a[src]))
                })
                .collect();
            let _ = writeln!(md, "## {title} dispersion, {arm} arm\n");
            let mut header = String::from("| Statistic |");
            let mut rule = String::from("|---|");
            for (name, s) in &cols {
                let loss = runs
                    .iter()
                    .find(|(n, _)| n == *name)
                    .and_then(|(_, v)| v["loss"].as_str())
                    .unwrap_or("?");
                let _ = write!(header, " {loss} (`{name}`, {} seeds) |", s["cohort_size"]);
                rule.push_str("---:|");
            }
            let _ = writeln!(md, "{header}\n{rule}");
            for (k, stat) in STATS.iter().enumerate() {
                let mut row = format!("| {stat} |");
                for (_, s) in &cols {
                    let _ = write!(row, " {} |", s["formatted"][k].as_str().unwrap_or("-"));
                }
                let _ = writeln!(md, "{row}");
            }
            for (name, s) in &cols {
                for f in s["failures"].as_array().into_iter().flatten() {
                    let _ = writeln!(
                        md,
                        "\n- `{name}`: seed {} excluded ({})",
                        f["seed"],
                        f["error"].as_str().unwrap_or("")
                    );
                }
            }
            md.push('\n');
        }
    }
}

fn search_table(md: &mut String, name: &str, csv_text: &str) {
    let _ = writeln!(md, "## Random search: {name}\n");
    let mut lines = csv_text.lines();
    let _ = lines.next();
    let _ = writeln!(
        md,
        "| Rank | Neurons | Learning rate | Steps | Loss | Validation metric |"
    );
    let _ = writeln!(md, "|---:|---:|---:|---:|---|---:|");
    let mut total = 0;
    for line in lines {
        total += 1;
        if total > 10 {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 7 {
            let metric: f64 = f[5].parse().unwrap_or(f64::NAN);
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {metric:.6} |",
                f[6], f[1], f[2], f[3], f[4]
            );
        }
    }
    let _ = writeln!(md, "\n{total} successful iterations.\n");
}

fn path_summary(md: &mut String, title: &str, name: &str, csv_text: &str) {
    let rows: Vec<(&str, f64)> = csv_text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .filter_map(|(d, v)| v.parse().ok().map(|v| (d, v)))
        .collect();
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        let _ = writeln!(
            md,
            "## {title}: {name}\n\n{} to {}: final wealth {:.4} ({:+.2}%).\n",
            first.0,
            last.0,
            last.1,
            100.0 * (last.1 / first.1 - 1.0)
        );
    }
}

pub fn render_dir(root: &Path) -> Result<String, CliError> {
    if !root.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", root.display())));
    }
    let mut md = String::from("# Run report\n\n");
    let mut sections = 0;
    let runs = find(root, "summary.json")?
        .iter()
        .map(|f| Ok((label(root, f), read_json(f)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    if !runs.is_empty() {
        dispersion_tables(&mut md, &runs);
        sections += runs.len();
    }
    for f in find(root, "search_results.csv")? {
        let text = fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
        search_table(&mut md, &label(root, &f), &text);
        sections += 1;
    }
    for f in find(root, "benchmark.csv")? {
        let text = fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
        path_summary(&mut md, "Risk-parity benchmark", &label(root, &f), &text);
        sections += 1;
    }
    for f in find(root, "cumret.csv")? {
        let text = fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
        path_summary(&mut md, "Trained portfolio", &label(root, &f), &text);
        sections += 1;
    }
    if sections == 0 {
        md.push_str("No run artifacts found.\n");
    }
    Ok(md)
}
