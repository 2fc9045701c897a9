use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{normalize_rate, CurveEnsemble, ItemResponseCurve};
use crate::menagerie::{HerdResult, HerdStatus, Optimizer};
use crate::tpe::Observation;

pub const CURVE_CSV_HEADER: &str = "level,match_rate,match_rate_normalized";
pub const ENSEMBLE_CSV_HEADER: &str = "level,match_rate,match_rate_normalized,mean,stderr";

/// Shortest decimal that parses back to `v` rounded to 9 significant
/// digits. Re-formatting a parsed value reproduces the same text.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("valid float literal");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

/// Persisted outcome of herding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerdRecord {
    pub threshold: f64,
    pub sheep: Vec<String>,
    pub loss: f64,
    pub status: HerdStatus,
    pub matcher: String,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub iterations: usize,
    pub loss_history: Vec<Observation>,
    /// Full run configuration of the producing command.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl HerdRecord {
    pub fn from_result(
        result: &HerdResult,
        matcher: impl Into<String>,
        seed: u64,
        optimizer: Optimizer,
        iterations: usize,
        config: serde_json::Value,
    ) -> Self {
        Self {
            threshold: result.threshold.value(),
            sheep: result.sheep.ids(),
            loss: result.loss,
            status: result.status,
            matcher: matcher.into(),
            seed,
            optimizer,
            iterations,
            loss_history: result.history.clone(),
            config,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn normalized_field(rate: f64, curve: &ItemResponseCurve) -> String {
    if curve.metadata.sheep >= 2 {
        format_sig9(normalize_rate(rate, curve.chance))
    } else {
        String::new()
    }
}

/// `level,match_rate,match_rate_normalized`, one row per level. The
/// normalized column is empty when fewer than two sheep make it undefined.
pub fn write_curve_csv(curve: &ItemResponseCurve) -> Result<String> {
    if curve.normalized {
        return Err(Error::Config(
            "write the raw curve; the CSV carries both raw and normalized rates".into(),
        ));
    }
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{}",
            format_sig9(p.level),
            format_sig9(p.match_rate),
            normalized_field(p.match_rate, curve)
        );
    }
    Ok(out)
}

/// Curve columns for the ensemble mean followed by `mean,stderr` of the raw
/// match rate across runs.
pub fn write_ensemble_csv(ensemble: &CurveEnsemble) -> Result<String> {
    let mean = &ensemble.mean;
    if mean.normalized {
        return Err(Error::Config("ensemble must be built from raw curves".into()));
    }
    let mut out = String::from(ENSEMBLE_CSV_HEADER);
    out.push('\n');
    for (p, se) in mean.points.iter().zip(&ensemble.stderr) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            format_sig9(p.level),
            format_sig9(p.match_rate),
            normalized_field(p.match_rate, mean),
            format_sig9(p.match_rate),
            format_sig9(*se)
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvCurveRow {
    pub level: f64,
    pub match_rate: f64,
    pub normalized: Option<f64>,
    pub stderr: Option<f64>,
}

/// Parses a curve or ensemble CSV.
pub fn read_curve_csv(text: &str) -> Result<Vec<CsvCurveRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty CSV".into()))?;
    let ensemble = match header.trim() {
        CURVE_CSV_HEADER => false,
        ENSEMBLE_CSV_HEADER => true,
        other => return Err(Error::Data(format!("unrecognized CSV header '{other}'"))),
    };
    let parse = |field: &str, line: usize| -> Result<Option<f64>> {
        if field.is_empty() {
            return Ok(None);
        }
        field
            .parse()
            .map(Some)
            .map_err(|_| Error::Data(format!("line {line}: '{field}' is not a number")))
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let n = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            let want = if ensemble { 5 } else { 3 };
            if fields.len() != want {
                return Err(Error::Data(format!(
                    "line {n}: expected {want} fields, got {}",
                    fields.len()
                )));
            }
            let level = parse(fields[0], n)?.ok_or_else(|| Error::Data(format!("line {n}: missing level")))?;
            let match_rate =
                parse(fields[1], n)?.ok_or_else(|| Error::Data(format!("line {n}: missing match rate")))?;
            Ok(CsvCurveRow {
                level,
                match_rate,
                normalized: parse(fields[2], n)?,
                stderr: if ensemble { parse(fields[4], n)? } else { None },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::{ensemble, CurveMetadata, ItemResponsePoint};
    use proptest::prelude::*;

    fn curve(rates: &[f64], sheep: usize) -> ItemResponseCurve {
        ItemResponseCurve {
            kind: "contrast-decrease".into(),
            lower: 0.0,
            upper: 1.0,
            points: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| ItemResponsePoint {
                    level: i as f64 / 3.0,
                    match_rate: r,
                    rank_one_rate: None,
                })
                .collect(),
            normalized: false,
            chance: 1.0 / sheep as f64,
            metadata: CurveMetadata {
                matcher: "pixels".into(),
                threshold: 0.97,
                seed: 4,
                sheep,
                sampled: sheep,
                label: None,
            },
        }
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(2.0 / 3.0 * 1e-7), "0.0000000666666667");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
    }

    #[test]
    fn curve_csv_layout() {
        let text = write_curve_csv(&curve(&[1.0, 0.5, 0.25], 4)).unwrap();
        assert_eq!(
            text,
            "level,match_rate,match_rate_normalized\n0,1,1\n0.333333333,0.5,0.333333333\n0.666666667,0.25,0\n"
        );
        let rows = read_curve_csv(&text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].normalized, Some(0.0));
    }

    #[test]
    fn single_sheep_leaves_normalized_column_empty() {
        let text = write_curve_csv(&curve(&[1.0], 1)).unwrap();
        assert_eq!(text.lines().nth(1), Some("0,1,"));
        assert_eq!(read_curve_csv(&text).unwrap()[0].normalized, None);
    }

    #[test]
    fn ensemble_csv_has_mean_and_stderr() {
        let e = ensemble(&[curve(&[1.0, 0.4], 5), curve(&[1.0, 0.6], 5)]).unwrap();
        let text = write_ensemble_csv(&e).unwrap();
        assert!(text.starts_with(ENSEMBLE_CSV_HEADER));
        let rows = read_curve_csv(&text).unwrap();
        assert_eq!(rows[1].match_rate, 0.5);
        assert_eq!(rows[1].stderr, Some(0.1));
    }

    #[test]
    fn herd_record_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let record = HerdRecord {
            threshold: 0.912345678,
            sheep: vec!["a".into(), "b".into()],
            loss: 1.0 - 0.99999 * 0.912345678,
            status: HerdStatus::Ok,
            matcher: "lbp".into(),
            seed: 7,
            optimizer: Optimizer::tpe(),
            iterations: 250,
            loss_history: vec![Observation { t: 0.1, loss: 3.9 }],
            config: serde_json::json!({"dataset": "lfw.json"}),
        };
        let path = dir.path().join("herd.json");
        write_json(&record, &path).unwrap();
        let back: HerdRecord = read_json(&path).unwrap();
        assert_eq!(back, record);
        write_json(&back, &path).unwrap();
        let again: HerdRecord = read_json(&path).unwrap();
        assert_eq!(again, record);
    }

    proptest! {
        #[test]
        fn sig9_reformat_is_stable(v in -1e6..1e6f64) {
            let once = format_sig9(v);
            let parsed: f64 = once.parse().unwrap();
            prop_assert_eq!(format_sig9(parsed), once.clone());
            prop_assert!((parsed - v).abs() <= 1e-8 * v.abs().max(1e-300));
        }

        #[test]
        fn curve_csv_round_trips(rates in prop::collection::vec(0.0..=1.0f64, 2..30)) {
            let c = curve(&rates, 7);
            let rows = read_curve_csv(&write_curve_csv(&c).unwrap()).unwrap();
            prop_assert_eq!(rows.len(), rates.len());
            for (p, r) in c.points.iter().zip(&rows) {
                prop_assert_eq!(format_sig9(r.level), format_sig9(p.level));
                prop_assert_eq!(format_sig9(r.match_rate), format_sig9(p.match_rate));
                let expected = normalize_rate(p.match_rate, c.chance);
                prop_assert!((r.normalized.unwrap() - expected).abs() <= 1e-8);
            }
        }
    }
}
