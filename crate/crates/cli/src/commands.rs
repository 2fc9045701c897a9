use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use log::{info, warn};
use psyphy_core::io::{
    emit_svg, load_dataset, load_manifest, read_curve_csv, read_json, write_curve_csv, write_ensemble_csv, write_json,
    HerdRecord, PlotOptions, PlotSeries,
};
use psyphy_core::irt::CurveMetadata;
use psyphy_core::seed::derive;
use psyphy_core::{
    ensemble, herd, irt_curve, CurveEnsemble, Error, HerdConfig, IdentitySet, ItemResponseCurve, ItemResponsePoint,
    Matcher, PointOptions, Result, Shepherd, Threshold,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const HERD_FILE: &str = "herd.json";
pub const CURVE_CSV: &str = "curve.csv";
pub const CURVE_JSON: &str = "curve.json";
pub const ENSEMBLE_CSV: &str = "ensemble.csv";
pub const ENSEMBLE_JSON: &str = "ensemble.json";
pub const PLOT_FILE: &str = "plot.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFile {
    pub config: serde_json::Value,
    pub curve: ItemResponseCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub config: serde_json::Value,
    pub ensemble: CurveEnsemble,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn output_dir(config: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&config.output).map_err(|e| Error::Load {
        path: config.output.clone(),
        reason: e.to_string(),
    })?;
    Ok(&config.output)
}

/// Identities plus the frame root named by a manifest, if any.
fn load_inputs(config: &RunConfig) -> Result<(IdentitySet, Option<PathBuf>)> {
    let path = config.dataset()?;
    let identities = load_dataset(path)?;
    let frames = if path.is_dir() {
        None
    } else {
        let manifest = load_manifest(path)?;
        manifest.precomputed.as_deref().map(|p| manifest.resolve(p))
    };
    Ok((identities, frames))
}

/// Herds the dataset and writes `herd.json`.
pub fn herd_command(config: &RunConfig) -> Result<HerdRecord> {
    let (identities, _) = load_inputs(config)?;
    let shepherd = config.shepherd()?;
    let optimizer = config.optimizer()?;
    info!(
        "herding {} identities with {} ({})",
        identities.len(),
        shepherd.name(),
        config.optimizer
    );
    let result = herd(
        shepherd.as_ref(),
        &identities,
        &HerdConfig {
            iterations: config.iterations,
            optimizer,
            seed: config.seed,
        },
    )?;
    let record = HerdRecord::from_result(
        &result,
        shepherd.name(),
        config.seed,
        optimizer,
        config.iterations,
        config.to_json(),
    );
    write_json(&record, &output_dir(config)?.join(HERD_FILE))?;
    Ok(record)
}

/// Sheep named by a herd record, in record order.
fn sheep_of(config: &RunConfig, herd_path: &Path) -> Result<(HerdRecord, IdentitySet, Option<PathBuf>)> {
    let record: HerdRecord = read_json(herd_path)?;
    if record.sheep.is_empty() {
        return Err(Error::Input(format!(
            "{} has no sheep; every identity was removed at t = {}",
            herd_path.display(),
            record.threshold
        )));
    }
    let (identities, frames) = load_inputs(config)?;
    let sheep = identities
        .select_ids(&record.sheep)
        .map_err(|e| e.context(format!("sheep of {}", herd_path.display())))?;
    Ok((record, sheep, frames))
}

fn curve_for(
    config: &RunConfig,
    shepherd: &dyn Shepherd,
    record: &HerdRecord,
    sheep: &IdentitySet,
    frames: Option<&Path>,
    seed: u64,
) -> Result<ItemResponseCurve> {
    let (kind, schedule) = config.perturbation(frames)?;
    let threshold = Threshold::new(record.threshold)?;
    let options = PointOptions {
        sample: config.sample,
        rank_one: config.rank_one,
    };
    irt_curve(shepherd, sheep, threshold, &kind, &schedule, seed, options).map_err(|aborted| {
        let done = aborted.partial.len();
        aborted
            .source
            .context(format!("curve aborted after {done} of {} levels", schedule.len()))
    })
}

/// Measures the item-response curve of the herd's sheep and writes
/// `curve.csv` and `curve.json`.
pub fn curve_command(config: &RunConfig, herd_path: &Path) -> Result<ItemResponseCurve> {
    let (record, sheep, frames) = sheep_of(config, herd_path)?;
    let shepherd = config.shepherd()?;
    info!("curve over {} sheep at t_h = {}", sheep.len(), record.threshold);
    let curve = curve_for(
        config,
        shepherd.as_ref(),
        &record,
        &sheep,
        frames.as_deref(),
        config.seed,
    )?;
    let dir = output_dir(config)?;
    write_text(&dir.join(CURVE_CSV), &write_curve_csv(&curve)?)?;
    write_json(
        &CurveFile {
            config: config.to_json(),
            curve: curve.clone(),
        },
        &dir.join(CURVE_JSON),
    )?;
    Ok(curve)
}

/// Repeated curves. With a weight fraction each run perturbs a fresh copy
/// of the matcher and keeps the stimuli fixed; without one the matcher is
/// fixed and each run draws new stimulus noise.
pub fn ensemble_command(config: &RunConfig, herd_path: &Path) -> Result<CurveEnsemble> {
    if config.runs < 2 {
        return Err(Error::Config(format!(
            "an ensemble needs at least 2 runs, got {}",
            config.runs
        )));
    }
    let (record, sheep, frames) = sheep_of(config, herd_path)?;
    let base: Option<Matcher> = config.builtin_matcher()?;
    let external = match (&base, config.weight_fraction) {
        (None, Some(_)) => {
            return Err(Error::Unsupported(
                "weight perturbation needs a built-in matcher with parameters".into(),
            ))
        }
        (None, None) => Some(config.external_shepherd()?),
        _ => None,
    };
    let mut curves = Vec::with_capacity(config.runs);
    for r in 0..config.runs as u64 {
        let (shepherd, seed): (Box<dyn Shepherd>, u64) = match (&base, config.weight_fraction) {
            (Some(m), Some(f)) => (
                Box::new(m.perturb_parameters(f, derive(config.seed, &[r, 1]))?),
                config.seed,
            ),
            (Some(m), None) => (Box::new(m.clone()), derive(config.seed, &[r, 0])),
            (None, _) => (
                Box::new(SharedShepherd(external.as_ref().expect("external shepherd"))),
                derive(config.seed, &[r, 0]),
            ),
        };
        info!("ensemble run {}/{}", r + 1, config.runs);
        let mut curve = curve_for(config, shepherd.as_ref(), &record, &sheep, frames.as_deref(), seed)
            .map_err(|e| e.context(format!("ensemble run {r}")))?;
        curve.metadata.label = Some(format!("run {r}"));
        curves.push(curve);
    }
    let mut result = ensemble(&curves)?;
    result.mean.metadata.label = Some(match config.weight_fraction {
        Some(f) => format!("{} mean, {} weights replaced", result.mean.metadata.matcher, f),
        None => format!("{} mean of {} runs", result.mean.metadata.matcher, config.runs),
    });
    let dir = output_dir(config)?;
    write_text(&dir.join(ENSEMBLE_CSV), &write_ensemble_csv(&result)?)?;
    write_json(
        &EnsembleFile {
            config: config.to_json(),
            ensemble: result.clone(),
        },
        &dir.join(ENSEMBLE_JSON),
    )?;
    Ok(result)
}

struct SharedShepherd<'a>(&'a dyn Shepherd);

impl Shepherd for SharedShepherd<'_> {
    fn name(&self) -> String {
        self.0.name()
    }

    fn similarity(&self, probes: &IdentitySet, gallery: &IdentitySet) -> Result<psyphy_core::SimilarityMatrix> {
        self.0.similarity(probes, gallery)
    }
}

/// A plot input, owned.
#[derive(Debug, Clone)]
pub enum Plottable {
    Curve(ItemResponseCurve),
    Ensemble(CurveEnsemble),
}

impl Plottable {
    pub fn series(&self) -> PlotSeries<'_> {
        match self {
            Plottable::Curve(c) => PlotSeries::Curve(c),
            Plottable::Ensemble(e) => PlotSeries::Ensemble(e),
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a curve or ensemble from JSON (`curve.json`, `ensemble.json`, or a
/// bare curve) or from one of the CSV layouts.
pub fn load_plottable(path: &Path) -> Result<Plottable> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        return plottable_from_csv(&text, &stem(path)).map_err(|e| e.context(path.display().to_string()));
    }
    let value: serde_json::Value = read_json(path)?;
    let parsed = if value.get("curve").is_some() {
        serde_json::from_value::<CurveFile>(value).map(|f| Plottable::Curve(f.curve))
    } else if value.get("ensemble").is_some() {
        serde_json::from_value::<EnsembleFile>(value).map(|f| Plottable::Ensemble(f.ensemble))
    } else if value.get("stderr").is_some() {
        serde_json::from_value::<CurveEnsemble>(value).map(Plottable::Ensemble)
    } else {
        serde_json::from_value::<ItemResponseCurve>(value).map(Plottable::Curve)
    };
    parsed.map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: format!("not a curve or ensemble: {e}"),
    })
}

/// The CSV carries no kind, bounds or chance directly. Chance comes back
/// from any row where the normalized rate differs from 1.
fn plottable_from_csv(text: &str, label: &str) -> Result<Plottable> {
    let rows = read_curve_csv(text)?;
    if rows.is_empty() {
        return Err(Error::Data("CSV has no rows".into()));
    }
    let chance = rows
        .iter()
        .find_map(|r| {
            r.normalized
                .filter(|n| (1.0 - n).abs() > 1e-9)
                .map(|n| (r.match_rate - n) / (1.0 - n))
        })
        .unwrap_or(0.0);
    let sheep = if chance > 0.0 {
        (1.0 / chance).round() as usize
    } else {
        1
    };
    let curve = ItemResponseCurve {
        kind: "perturbation".into(),
        lower: rows[0].level,
        upper: rows[rows.len() - 1].level,
        points: rows
            .iter()
            .map(|r| ItemResponsePoint {
                level: r.level,
                match_rate: r.match_rate,
                rank_one_rate: None,
            })
            .collect(),
        normalized: false,
        chance,
        metadata: CurveMetadata {
            matcher: "unknown".into(),
            threshold: f64::NAN,
            seed: 0,
            sheep,
            sampled: sheep,
            label: Some(label.to_string()),
        },
    };
    if rows.iter().all(|r| r.stderr.is_some()) {
        let stderr = rows.iter().map(|r| r.stderr.unwrap_or(0.0)).collect();
        Ok(Plottable::Ensemble(CurveEnsemble {
            runs: Vec::new(),
            mean: curve,
            stderr,
        }))
    } else {
        Ok(Plottable::Curve(curve))
    }
}

pub fn plot_command(inputs: &[PathBuf], output: &Path, options: &PlotOptions) -> Result<()> {
    let loaded = inputs.iter().map(|p| load_plottable(p)).collect::<Result<Vec<_>>>()?;
    if options.normalized {
        for (p, item) in inputs.iter().zip(&loaded) {
            let c = match item {
                Plottable::Curve(c) => c,
                Plottable::Ensemble(e) => &e.mean,
            };
            if !c.normalized && c.metadata.sheep < 2 {
                return Err(Error::Config(format!(
                    "{} cannot be chance-normalized (fewer than 2 sheep)",
                    p.display()
                )));
            }
        }
    }
    let series: Vec<PlotSeries<'_>> = loaded.iter().map(Plottable::series).collect();
    write_text(output, &emit_svg(&series, options)?)
}

/// Outputs of [`run_command`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub herd: HerdRecord,
    pub curve: Option<ItemResponseCurve>,
    pub ensemble: Option<CurveEnsemble>,
}

/// Herd, curve, optional weight-perturbation ensemble, and a plot.
pub fn run_command(config: &RunConfig) -> Result<RunOutputs> {
    let herd = herd_command(config)?;
    let dir = output_dir(config)?.to_path_buf();
    let herd_path = dir.join(HERD_FILE);
    if herd.sheep.is_empty() {
        warn!("no sheep at t_h = {}; skipping curves", herd.threshold);
        return Ok(RunOutputs {
            herd,
            curve: None,
            ensemble: None,
        });
    }
    let curve = curve_command(config, &herd_path)?;
    let ensemble = match config.weight_fraction {
        Some(_) => Some(ensemble_command(config, &herd_path)?),
        None => None,
    };
    let mut series = vec![PlotSeries::Curve(&curve)];
    if let Some(e) = &ensemble {
        series.push(PlotSeries::Ensemble(e));
    }
    let options = PlotOptions {
        title: Some(format!("{} sheep, t_h = {:.6}", herd.sheep.len(), herd.threshold)),
        ..PlotOptions::default()
    };
    write_text(&dir.join(PLOT_FILE), &emit_svg(&series, &options)?)?;
    Ok(RunOutputs {
        herd,
        curve: Some(curve),
        ensemble,
    })
}

/// Serves a built-in matcher over the line protocol: on stdin/stdout, or on
/// a TCP listener with one thread per connection. When listening, the bound
/// address is printed on stdout first.
pub fn serve_command(config: &RunConfig, listen: Option<&str>) -> Result<()> {
    let matcher = config
        .builtin_matcher()?
        .ok_or_else(|| Error::Config("shepherd-serve needs a built-in matcher".into()))?;
    let Some(address) = listen else {
        let stdin = std::io::stdin();
        return psyphy_core::extshepherd::serve(stdin.lock(), std::io::stdout().lock(), &matcher);
    };
    let listener = TcpListener::bind(address).map_err(|e| Error::Io(e).context(format!("binding {address}")))?;
    let bound = listener.local_addr()?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "listening on {bound}")?;
        out.flush()?;
    }
    std::thread::scope(|scope| {
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let matcher = &matcher;
            scope.spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(e) => return warn!("{peer}: {e}"),
                };
                if let Err(e) = psyphy_core::extshepherd::serve(reader, stream, matcher) {
                    warn!("{peer}: {e}");
                }
            });
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chance_comes_back_from_the_csv() {
        let text = "level,match_rate,match_rate_normalized\n0,1,1\n1,0.5,0.333333333\n2,0.25,0\n";
        let Plottable::Curve(c) = plottable_from_csv(text, "x").unwrap() else {
            panic!("expected a curve")
        };
        assert!((c.chance - 0.25).abs() < 1e-8);
        assert_eq!(c.metadata.sheep, 4);
    }

    #[test]
    fn ensemble_csv_becomes_an_ensemble() {
        let text = "level,match_rate,match_rate_normalized,mean,stderr\n0,1,1,1,0\n1,0.5,0,0.5,0.1\n";
        let Plottable::Ensemble(e) = plottable_from_csv(text, "x").unwrap() else {
            panic!("expected an ensemble")
        };
        assert_eq!(e.stderr, vec![0.0, 0.1]);
        assert_eq!(e.mean.metadata.sheep, 2);
    }
}
