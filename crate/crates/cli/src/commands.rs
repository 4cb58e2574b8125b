use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use coefmon_core::baseline::{baseline_calibrate, baseline_detect};
use coefmon_core::cases::{run_scenario, Scenario};
use coefmon_core::conformal::{
    calibrate as calibrate_profile, detect as detect_window, first_detection, mine_window, read_verdicts_csv,
    split_error_free, write_verdicts_csv, CalibrationProfile, Verdict,
};
use coefmon_core::dihrnn::{induce_structure, ModelTemplate};
use coefmon_core::io::{read_trace_csv, write_trace_csv};
use coefmon_core::report::{detection_lead, detection_metrics, residue_svg, DetectionMetrics, ScenarioResult};
use coefmon_core::{continuous_mine, Error, Segment, Trace};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    load_json, BaselineConfig, CalibrateConfig, CliError, CliResult, DetectConfig, Loaded, MineConfig,
    NonConvergencePolicy, ReportConfig,
};
use crate::Common;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { file: dir.to_path_buf(), source })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { file: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Io { file: path.to_path_buf(), source })
}

fn read_trace(path: &Path, template: &ModelTemplate) -> CliResult<Segment> {
    let f = File::open(path).map_err(|source| CliError::Io { file: path.to_path_buf(), source })?;
    read_trace_csv(f, &template.system, &template.basal_state).map_err(|e| match e {
        Error::InvalidInput(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
        e => e.into(),
    })
}

pub fn simulate(c: &Common) -> CliResult<Vec<PathBuf>> {
    let mut scenario: Scenario = load_json(&c.config)?;
    if let Some(seed) = c.seed {
        scenario.seed = seed;
    }
    let run = run_scenario(&scenario)?;
    write_trace_csv(create(&c.out)?, &run.system, &run.logged, true)?;
    Ok(vec![c.out.clone()])
}

pub fn mine(c: &Common) -> CliResult<Vec<PathBuf>> {
    let cfg = Loaded::<MineConfig>::load(&c.config)?;
    let template = cfg.value.model.template(&cfg)?;
    let structure = induce_structure(&template)?;
    let mut mining = cfg.value.mining.clone();
    if let Some(seed) = c.seed {
        mining.seed = seed;
    }
    let seg = read_trace(&cfg.resolve(&cfg.value.trace), &template)?;
    let trace = Trace::windowed(&seg, mining.window_len, mining.window_stride)?;
    let seq = continuous_mine(&trace, &structure, &mining)?;
    write_json(&c.out, &seq)?;
    Ok(vec![c.out.clone()])
}

pub fn calibrate(c: &Common) -> CliResult<Vec<PathBuf>> {
    let cfg = Loaded::<CalibrateConfig>::load(&c.config)?;
    let template = cfg.value.model.template(&cfg)?;
    let structure = induce_structure(&template)?;
    let mut mining = cfg.value.mining.clone();
    let mut split_seed = cfg.value.split_seed;
    if let Some(seed) = c.seed {
        mining.seed = seed;
        split_seed = seed;
    }
    let segments =
        cfg.value.traces.iter().map(|p| read_trace(&cfg.resolve(p), &template)).collect::<CliResult<Vec<_>>>()?;
    let (train, test) = split_error_free(&segments, split_seed)?;
    let cal = calibrate_profile(&train, &test, &structure, &mining, &cfg.value.settings, None)?;
    for w in &cal.warnings {
        warn!("{w}");
    }
    write_json(&c.out, &cal.profile)?;
    Ok(vec![c.out.clone()])
}

pub fn detect(c: &Common) -> CliResult<Vec<PathBuf>> {
    let cfg = Loaded::<DetectConfig>::load(&c.config)?;
    let template = cfg.value.model.template(&cfg)?;
    let structure = induce_structure(&template)?;
    let profile: CalibrationProfile = load_json(&cfg.resolve(&cfg.value.profile))?;
    let mut mining = cfg.value.mining.clone();
    if let Some(seed) = c.seed {
        mining.seed = seed;
    }
    let seg = read_trace(&cfg.resolve(&cfg.value.trace), &template)?;
    let windows = Trace::windowed(&seg, mining.window_len, mining.window_stride)?.into_segments();
    let policy = cfg.value.on_nonconvergence;
    let mined = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| match mine_window(w, &structure, &mining, i) {
            Ok(m) => Ok(m.omega),
            Err(Error::NonConvergence { best, upsilon }) if policy == NonConvergencePolicy::UseBest => {
                warn!(
                    "window {i}: replay distance {} above {upsilon}; scoring the best estimate",
                    best.report.distance
                );
                Ok(best.omega)
            }
            Err(source) => Err(CliError::DetectMining { window: i, source }),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let verdicts =
        mined.iter().enumerate().map(|(i, w)| detect_window(w, &profile, i)).collect::<Result<Vec<_>, _>>()?;
    let detect_time = first_detection(&verdicts).map(|i| windows[i].trajectory.t0());
    write_verdicts_csv(create(&c.out)?, &verdicts, Some(detect_time))?;
    Ok(vec![c.out.clone()])
}

pub fn baseline(c: &Common) -> CliResult<Vec<PathBuf>> {
    let cfg = Loaded::<BaselineConfig>::load(&c.config)?;
    let template = cfg.value.model.template(&cfg)?;
    let sys = &template.system;
    let clean = cfg
        .value
        .clean
        .iter()
        .map(|p| read_trace(&cfg.resolve(p), &template).map(|s| s.trajectory))
        .collect::<CliResult<Vec<_>>>()?;
    let (profile, warnings) =
        baseline_calibrate(&clean, sys, &cfg.value.safety, &cfg.value.channels, &cfg.value.settings)?;
    for w in &warnings {
        warn!("{w}");
    }
    let seg = read_trace(&cfg.resolve(&cfg.value.trace), &template)?;
    let windows: Vec<_> = match cfg.value.window_len {
        Some(len) => Trace::windowed(&seg, len, len)?.into_segments().into_iter().map(|s| s.trajectory).collect(),
        None => vec![seg.trajectory],
    };
    let outcome = baseline_detect(&windows, sys, &profile)?;
    write_verdicts_csv(create(&c.out)?, &outcome.verdicts, Some(outcome.detect_time))?;
    Ok(vec![c.out.clone()])
}

#[derive(Serialize)]
struct MethodSummary {
    windows: usize,
    first_detection: Option<usize>,
    label: &'static str,
}

impl MethodSummary {
    fn of(verdicts: &[Verdict]) -> Self {
        let first = first_detection(verdicts);
        Self { windows: verdicts.len(), first_detection: first, label: if first.is_some() { "D" } else { "ND" } }
    }
}

#[derive(Serialize)]
struct ScenarioRow {
    name: String,
    faulty: bool,
    coefficient: MethodSummary,
    baseline: Option<MethodSummary>,
    /// Windows by which the coefficient method detected before the baseline.
    lead: Option<i64>,
}

#[derive(Serialize)]
struct Report {
    scenarios: Vec<ScenarioRow>,
    coefficient: DetectionMetrics,
    baseline: Option<DetectionMetrics>,
}

fn read_verdicts(path: &Path) -> CliResult<Vec<Verdict>> {
    let f = File::open(path).map_err(|source| CliError::Io { file: path.to_path_buf(), source })?;
    Ok(read_verdicts_csv(f)?)
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn report(c: &Common) -> CliResult<Vec<PathBuf>> {
    let cfg = Loaded::<ReportConfig>::load(&c.config)?;
    let mut outputs = vec![c.out.clone()];
    let mut rows = Vec::new();
    let mut coef = Vec::new();
    let mut base = Vec::new();
    for s in &cfg.value.scenarios {
        let cv = read_verdicts(&cfg.resolve(&s.coefficient))?;
        let bv = s.baseline.as_ref().map(|p| read_verdicts(&cfg.resolve(p))).transpose()?;
        rows.push(ScenarioRow {
            name: s.name.clone(),
            faulty: s.faulty,
            coefficient: MethodSummary::of(&cv),
            baseline: bv.as_deref().map(MethodSummary::of),
            lead: bv.as_deref().and_then(|b| detection_lead(&cv, b)),
        });
        if cfg.value.plots {
            let stem = c.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let svg = c.out.with_file_name(format!("{stem}.{}.svg", slug(&s.name)));
            std::fs::write(&svg, residue_svg(&s.name, &cv))
                .map_err(|source| CliError::Io { file: svg.clone(), source })?;
            outputs.push(svg);
        }
        if let Some(b) = bv {
            base.push(ScenarioResult { name: s.name.clone(), faulty: s.faulty, verdicts: b });
        }
        coef.push(ScenarioResult { name: s.name.clone(), faulty: s.faulty, verdicts: cv });
    }
    let report = Report {
        scenarios: rows,
        coefficient: detection_metrics(&coef),
        baseline: (!base.is_empty()).then(|| detection_metrics(&base)),
    };
    write_json(&c.out, &report)?;
    Ok(outputs)
}
