//! Human-readable run summaries rendered from a sealed manifest and the
//! artifacts it lists.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::manifest::RunManifest;

fn output_path(manifest: &RunManifest, dir: &Path, name: &str) -> Result<PathBuf> {
    if !manifest.outputs.iter().any(|o| o.name == name) {
        bail!("manifest lists no output named {name}");
    }
    let path = dir.join(name);
    if !path.is_file() {
        bail!("output {name} missing from {}", dir.display());
    }
    Ok(path)
}

fn has_output(manifest: &RunManifest, name: &str) -> bool {
    manifest.outputs.iter().any(|o| o.name == name)
}

fn read_json(manifest: &RunManifest, dir: &Path, name: &str) -> Result<serde_json::Value> {
    let path = output_path(manifest, dir, name)?;
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {name}"))
}

/// Rows of a CSV output as (header -> value) maps, preserving row order.
fn read_csv(
    manifest: &RunManifest,
    dir: &Path,
    name: &str,
) -> Result<Vec<BTreeMap<String, String>>> {
    let path = output_path(manifest, dir, name)?;
    let mut reader = csv::Reader::from_path(&path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(
            headers
                .iter()
                .cloned()
                .zip(record.iter().map(str::to_string))
                .collect(),
        );
    }
    Ok(rows)
}

fn field<'a>(row: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    row.get(key)
        .map(String::as_str)
        .with_context(|| format!("CSV row missing column {key}"))
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    Ok(field(row, key)?.parse()?)
}

fn json_f64(v: &serde_json::Value, key: &str) -> f64 {
    v.get(key).and_then(|x| x.as_f64()).unwrap_or(f64::NAN)
}

fn count_lines(path: &Path) -> Result<usize> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count())
}

pub fn emit_report(manifest: &RunManifest, dir: &Path) -> Result<String> {
    if manifest.outputs.is_empty() {
        bail!("empty manifest: the run produced no outputs");
    }
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", manifest.experiment);
    let _ = writeln!(s, "seed: {}", manifest.seed);
    let _ = writeln!(s, "run digest: {}", manifest.digest);
    match manifest.experiment.as_str() {
        "gen-corpus" => gen_corpus_report(manifest, dir, &mut s)?,
        "coin" => coin_report(manifest, dir, &mut s)?,
        "palace" => palace_report(manifest, dir, &mut s)?,
        "stat" => stat_report(manifest, dir, &mut s)?,
        other => bail!("unknown experiment {other} in manifest"),
    }
    Ok(s)
}

fn gen_corpus_report(manifest: &RunManifest, dir: &Path, s: &mut String) -> Result<()> {
    let n = count_lines(&output_path(manifest, dir, "corpus.jsonl")?)?;
    let stats = read_json(manifest, dir, "stats.json")?;
    let _ = writeln!(s, "corpus records: {n}");
    let _ = writeln!(
        s,
        "reasoning tokens: mean {:.1}, std {:.1}",
        json_f64(&stats, "mean"),
        json_f64(&stats, "std")
    );
    if has_output(manifest, "aux.jsonl") {
        let m = count_lines(&output_path(manifest, dir, "aux.jsonl")?)?;
        let _ = writeln!(s, "aux records: {m}");
    }
    Ok(())
}

fn coin_report(manifest: &RunManifest, dir: &Path, s: &mut String) -> Result<()> {
    let cal = read_json(manifest, dir, "calibration.json")?;
    let _ = writeln!(
        s,
        "verifier threshold: {:.6} (pooled min {:.6}, zmax {})",
        json_f64(&cal, "threshold"),
        json_f64(&cal, "pooled_min_score"),
        json_f64(&cal, "aggregate_zmax"),
    );

    let rows = read_csv(manifest, dir, "attacks.csv")?;
    let mut per_attack: BTreeMap<String, (usize, usize, f64, f64, usize)> = BTreeMap::new();
    for row in &rows {
        let e = per_attack
            .entry(field(row, "attack")?.to_string())
            .or_insert((0, 0, 0.0, 0.0, 0));
        e.0 += 1;
        if field(row, "detected")? == "true" {
            e.1 += 1;
        }
        e.2 += num(row, "added_blocks")?;
        e.3 += num(row, "inflation_percent")?;
        if field(row, "added_blocks")? == field(row, "budget")? {
            e.4 += 1;
        }
    }
    let _ = writeln!(
        s,
        "{:<28} {:>6} {:>9} {:>11} {:>12} {:>13}",
        "attack", "n", "detected", "mean_added", "budget_hits", "mean_infl%"
    );
    for (attack, (n, detected, added, infl, full)) in &per_attack {
        let _ = writeln!(
            s,
            "{:<28} {:>6} {:>9} {:>11.1} {:>12} {:>13.1}",
            attack,
            n,
            detected,
            added / *n as f64,
            full,
            infl / *n as f64,
        );
    }

    let _ = writeln!(s, "mean inflation by honest block count:");
    let _ = writeln!(
        s,
        "{:<28} {:>7} {:>5} {:>13}",
        "attack", "blocks", "n", "mean_infl%"
    );
    for row in read_csv(manifest, dir, "by_block_count.csv")? {
        let _ = writeln!(
            s,
            "{:<28} {:>7} {:>5} {:>13.1}",
            field(&row, "attack")?,
            field(&row, "original_blocks")?,
            field(&row, "n_records")?,
            num(&row, "mean_inflation_percent")?,
        );
    }
    Ok(())
}

fn palace_report(manifest: &RunManifest, dir: &Path, s: &mut String) -> Result<()> {
    if has_output(manifest, "metrics.json") {
        let m = read_json(manifest, dir, "metrics.json")?;
        let mode = m.get("mode").and_then(|v| v.as_str()).unwrap_or("?");
        let _ = writeln!(s, "mode: {mode}");
        let _ = writeln!(
            s,
            "poisoned {} of {} training records (rate {})",
            m.get("n_poisoned").and_then(|v| v.as_u64()).unwrap_or(0),
            m.get("n_train").and_then(|v| v.as_u64()).unwrap_or(0),
            json_f64(&m, "rate"),
        );
        let _ = writeln!(
            s,
            "inflated fraction: {:.4} (mean inflation {:.1}%, vs label {:.1}%)",
            json_f64(&m, "fraction_inflated"),
            json_f64(&m, "mean_inflation_percent"),
            json_f64(&m, "mean_inflation_vs_label_percent"),
        );
        let _ = writeln!(s, "untriggered drift: {:.4}", json_f64(&m, "untriggered_drift"));
        let _ = writeln!(
            s,
            "short stratum mean prediction: clean {:.1} -> poisoned {:.1} ({:+.1}%)",
            json_f64(&m, "short_mean_clean"),
            json_f64(&m, "short_mean_poisoned"),
            json_f64(&m, "short_raise_percent"),
        );
    } else if has_output(manifest, "triggers.csv") {
        let _ = writeln!(s, "mode: steering");
        let _ = writeln!(
            s,
            "{:<6} {:<12} {:>11} {:>13}",
            "rank", "token", "mean_delta", "success_rate"
        );
        for row in read_csv(manifest, dir, "triggers.csv")? {
            let _ = writeln!(
                s,
                "{:<6} {:<12} {:>11.1} {:>13.3}",
                field(&row, "rank")?,
                field(&row, "token")?,
                num(&row, "mean_delta")?,
                num(&row, "success_rate")?,
            );
        }
    } else if has_output(manifest, "style.csv") {
        let _ = writeln!(s, "mode: style");
        let rows = read_csv(manifest, dir, "style.csv")?;
        let mut best: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_records = 0usize;
        for row in &rows {
            if field(row, "best")? == "true" {
                *best.entry(field(row, "variant")?.to_string()).or_default() += 1;
                n_records += 1;
            }
        }
        let _ = writeln!(s, "largest-estimate variant over {n_records} records:");
        for (variant, count) in &best {
            let _ = writeln!(
                s,
                "  {:<10} {:>6} ({:.1}%)",
                variant,
                count,
                100.0 * *count as f64 / n_records as f64
            );
        }
    } else {
        bail!("palace manifest lists no recognized mode output");
    }
    Ok(())
}

fn stat_report(manifest: &RunManifest, dir: &Path, s: &mut String) -> Result<()> {
    if has_output(manifest, "audit.json") {
        let a = read_json(manifest, dir, "audit.json")?;
        let _ = writeln!(
            s,
            "records: {}",
            a.get("n_records").and_then(|v| v.as_u64()).unwrap_or(0)
        );
        let _ = writeln!(s, "z scale: {}", json_f64(&a, "z_scale_used"));
        let flagged = match a.get("flagged_at").and_then(|v| v.as_u64()) {
            Some(i) => i.to_string(),
            None => "none".to_string(),
        };
        let _ = writeln!(s, "flagged_at: {flagged}");
        let _ = writeln!(
            s,
            "final M: {:.6} (threshold {})",
            json_f64(&a, "final_m"),
            json_f64(&a, "threshold")
        );
        let _ = writeln!(s, "max Z: {:.1}", json_f64(&a, "max_z"));
        let _ = writeln!(
            s,
            "net inflation: {} tokens ({:.2}% of honest)",
            a.get("net_inflation_tokens")
                .and_then(|v| v.as_i64())
                .unwrap_or(0),
            json_f64(&a, "net_inflation_percent"),
        );
    } else if has_output(manifest, "sweep_inflation.csv") {
        let sweep = read_json(manifest, dir, "sweep.json")?;
        for row in read_csv(manifest, dir, "sweep_inflation.csv")? {
            let _ = writeln!(
                s,
                "amount {:>7}: {}",
                field(&row, "amount")?,
                if field(&row, "flagged")? == "true" {
                    "flagged"
                } else {
                    "pass"
                }
            );
        }
        match sweep.get("first_failing_amount").and_then(|v| v.as_u64()) {
            Some(a) => {
                let _ = writeln!(s, "first failing amount: {a}");
            }
            None => {
                let _ = writeln!(s, "first failing amount: none");
            }
        }
    } else if has_output(manifest, "sweep_offset.csv") {
        let sweep = read_json(manifest, dir, "sweep.json")?;
        for row in read_csv(manifest, dir, "sweep_offset.csv")? {
            let _ = writeln!(
                s,
                "offset {:>5}: {} (net {} tokens, {:.2}%)",
                field(&row, "offset")?,
                if field(&row, "flagged")? == "true" {
                    "flagged"
                } else {
                    "pass"
                },
                field(&row, "net_inflation_tokens")?,
                num(&row, "net_inflation_percent")?,
            );
        }
        match sweep.get("first_passing_offset").and_then(|v| v.as_u64()) {
            Some(o) => {
                let _ = writeln!(
                    s,
                    "first passing offset: {o} (net {} tokens, {:.2}%)",
                    sweep
                        .get("net_inflation_tokens")
                        .and_then(|v| v.as_i64())
                        .unwrap_or(0),
                    json_f64(&sweep, "net_inflation_percent"),
                );
            }
            None => {
                let _ = writeln!(s, "first passing offset: none");
            }
        }
    } else {
        bail!("stat manifest lists neither a trajectory nor a sweep");
    }
    Ok(())
}
