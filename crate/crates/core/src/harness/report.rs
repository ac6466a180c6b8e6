//! Report files: a flat CSV, a nested JSON document, MAE-vs-lambda charts and a run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use plotters::prelude::*;
use serde_json::{json, Map, Value};

use super::config::Defense;
use super::experiment::{EvalReport, ReportCell};
use crate::error::{Error, Result};
use crate::perturb::Strategy;

pub const CSV_HEADER: [&str; 9] = ["defense", "attack", "lambda", "mae_mean", "mae_std", "rmse_mean", "rmse_std", "seeds_ok", "status"];

fn status(cell: &ReportCell) -> String {
    match cell.failures.first() {
        None => "ok".into(),
        Some((seed, msg)) if !cell.failed() => format!("partial: seed {seed}: {msg}"),
        Some((seed, msg)) => format!("failed: seed {seed}: {msg}"),
    }
}

/// CSV text of the report; deterministic for a given report.
pub fn report_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for c in &report.cells {
        let nums = match c.summary() {
            Some(s) => [s.mae_mean, s.mae_std, s.rmse_mean, s.rmse_std].map(|v| format!("{v:.4}")),
            None => Default::default(),
        };
        let mut row = vec![c.defense.name().to_string(), c.attack_name().to_string(), format!("{}", c.lambda)];
        row.extend(nums);
        row.push(c.values.len().to_string());
        row.push(status(c));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

pub fn report_json(report: &EvalReport, generated_at_unix: u64) -> Value {
    let mut defenses = Map::new();
    for c in &report.cells {
        let entry = defenses.entry(c.defense.name()).or_insert_with(|| json!({ "clean": null, "attacks": {} }));
        let body = match c.summary() {
            Some(s) => json!({
                "mae_mean": s.mae_mean, "mae_std": s.mae_std,
                "rmse_mean": s.rmse_mean, "rmse_std": s.rmse_std,
                "seeds_ok": c.values.len(), "status": status(c),
            }),
            None => json!({ "seeds_ok": 0, "status": status(c) }),
        };
        match c.attack {
            None => entry["clean"] = body,
            Some(s) => {
                let attacks = entry["attacks"].as_object_mut().expect("object");
                let per = attacks.entry(s.name()).or_insert_with(|| json!({}));
                per.as_object_mut().expect("object").insert(format!("{}", c.lambda), body);
            }
        }
    }
    json!({
        "generated_at_unix": generated_at_unix,
        "config_hash": report.config_hash,
        "seeds": report.seeds,
        "defenses": defenses,
    })
}

/// One SVG per attack strategy: mean MAE against lambda, a line per defense.
pub fn write_charts(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut by_strategy: BTreeMap<Strategy, BTreeMap<Defense, Vec<(f64, f64)>>> = BTreeMap::new();
    for c in &report.cells {
        if let (Some(s), Some(sum)) = (c.attack, c.summary()) {
            by_strategy.entry(s).or_default().entry(c.defense).or_default().push((c.lambda, sum.mae_mean));
        }
    }
    let mut paths = Vec::new();
    for (strategy, lines) in by_strategy {
        let path = out_dir.join(format!("mae_vs_lambda_{}.svg", strategy.name()));
        draw_chart(&path, strategy, &lines).map_err(|e| Error::Serde(format!("chart {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}

fn draw_chart(path: &Path, strategy: Strategy, lines: &BTreeMap<Defense, Vec<(f64, f64)>>) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let points = lines.values().flatten();
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if x0 == x1 {
        x0 -= 5.0;
        x1 += 5.0;
    }
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("PGD-{strategy}: MAE vs attacked nodes"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..(y1 * 1.1).max(1e-6))?;
    chart.configure_mesh().x_desc("lambda (% of nodes)").y_desc("MAE").draw()?;
    for (k, (defense, pts)) in lines.iter().enumerate() {
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
            .label(defense.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

/// Writes `report.csv`, `report.json`, the charts and `run_manifest.toml`.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, report_csv(report)?).map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let json_path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report_json(report, now)).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);
    written.extend(write_charts(report, out_dir)?);
    let manifest_path = out_dir.join("run_manifest.toml");
    let mut manifest = toml::Table::new();
    manifest.insert("config_hash".into(), toml::Value::String(report.config_hash.clone()));
    manifest.insert("seeds".into(), toml::Value::Array(report.seeds.iter().map(|&s| toml::Value::Integer(s as i64)).collect()));
    manifest.insert("code_version".into(), toml::Value::String(concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into()));
    let text = toml::to_string(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    written.push(manifest_path);
    Ok(written)
}
