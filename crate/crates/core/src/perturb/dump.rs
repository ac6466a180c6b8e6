use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One attacked sample: identity, attack settings, and MAE per horizon step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackRecord {
    pub sample_id: usize,
    pub strategy: String,
    pub lambda: f64,
    pub epsilon: f64,
    pub horizon_mae: Vec<f64>,
}

/// Writes `sample_id,strategy,lambda,epsilon,mae_h1..mae_hT`.
pub fn write_attack_csv(path: &Path, records: &[AttackRecord]) -> Result<()> {
    let horizon = records.first().map_or(0, |r| r.horizon_mae.len());
    if records.iter().any(|r| r.horizon_mae.len() != horizon) {
        return Err(Error::Contract("attack records disagree on horizon length".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{other:?}")),
    })?;
    let mut header = vec!["sample_id".to_string(), "strategy".into(), "lambda".into(), "epsilon".into()];
    header.extend((1..=horizon).map(|h| format!("mae_h{h}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.sample_id.to_string(), r.strategy.clone(), format!("{}", r.lambda), format!("{}", r.epsilon)];
        row.extend(r.horizon_mae.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_one_row_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attack.csv");
        let rec = AttackRecord { sample_id: 3, strategy: "random".into(), lambda: 20.0, epsilon: 0.5, horizon_mae: vec![1.0, 2.0] };
        write_attack_csv(&path, &[rec.clone(), rec]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "sample_id,strategy,lambda,epsilon,mae_h1,mae_h2");
        assert_eq!(lines[1], "3,random,20,0.5,1.000000,2.000000");
    }
}
