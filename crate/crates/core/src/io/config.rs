//! INI-style experiment configuration.
//!
//! Grammar: `[section]` headers, `key = value` lines, `#` starts a comment
//! that runs to the end of the line, blank lines are ignored. Lists are
//! comma-separated; ranges are written as two comma-separated numbers.
//! Unknown sections or keys, duplicate keys, and keys before the first
//! section header are errors. Every error names the offending line.
//!
//! [`ExperimentConfig::to_ini`] writes every key in a fixed order, so parsing
//! its output gives back the same configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{Method, OdsOptions};
use crate::layout::NodeLayout;
use crate::scene::SceneParams;
use crate::stft::StftParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    Oracle,
    Spp,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Oracle => "oracle",
            LabelSource::Spp => "spp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputMode {
    Synthetic,
    Wav { x_path: PathBuf, v_path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Snr,
    Frames,
    Nodes,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::Frames => "frames",
            SweepAxis::Nodes => "nodes",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "snr" => Ok(SweepAxis::Snr),
            "frames" => Ok(SweepAxis::Frames),
            "nodes" => Ok(SweepAxis::Nodes),
            _ => Err(format!(
                "unknown sweep axis '{s}' (expected snr, frames or nodes)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub results: String,
    pub summary: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            dir: PathBuf::from("out"),
            results: "results.csv".into(),
            summary: "summary.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub layout: NodeLayout,
    pub stft: StftParams,
    /// Always kept in canonical order without duplicates.
    pub methods: Vec<Method>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub labels: LabelSource,
    pub spp_threshold: f64,
    /// Worker threads, `0` picks automatically.
    pub threads: usize,
    pub ods: OdsOptions,
    pub scene: SceneParams,
    pub input: InputMode,
    pub output: OutputPaths,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            layout: NodeLayout::default_asn(),
            stft: StftParams::default(),
            methods: Method::ALL.to_vec(),
            snr_db: vec![-5.0, 0.0, 5.0],
            trials: 20,
            seed: 0,
            labels: LabelSource::Oracle,
            spp_threshold: crate::covariance::DEFAULT_THRESHOLD,
            threads: 0,
            ods: OdsOptions::default(),
            scene: SceneParams::default(),
            input: InputMode::Synthetic,
            output: OutputPaths::default(),
            sweep: None,
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("layout", &["node_sizes", "ref_index"]),
    ("stft", &["sample_rate", "frame_len", "hop"]),
    (
        "experiment",
        &[
            "methods",
            "snr_db",
            "trials",
            "seed",
            "labels",
            "spp_threshold",
            "threads",
        ],
    ),
    (
        "ods",
        &[
            "max_iters",
            "tol",
            "starts",
            "init",
            "restart_seed",
            "memory",
        ],
    ),
    (
        "scene",
        &[
            "frames",
            "segment_frames",
            "magnitude_range",
            "phase_spread",
            "phi_x_range",
            "noise_power_range",
            "block_coherence",
            "epsilon",
        ],
    ),
    ("input", &["mode", "x_path", "v_path"]),
    ("output", &["dir", "results", "summary"]),
    ("sweep", &["axis", "values"]),
];

struct Entry {
    section: &'static str,
    key: &'static str,
    value: String,
    line: usize,
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn scalar<T: FromStr>(e: &Entry, what: &str) -> Result<T> {
    e.value.parse().map_err(|_| {
        err(
            e.line,
            format!("{}: expected {what}, got '{}'", e.key, e.value),
        )
    })
}

fn list<T: FromStr>(e: &Entry, what: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = e.value.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(err(
            e.line,
            format!("{}: empty list item in '{}'", e.key, e.value),
        ));
    }
    items
        .into_iter()
        .map(|s| {
            s.parse().map_err(|_| {
                err(
                    e.line,
                    format!("{}: expected a list of {what}, got '{s}'", e.key),
                )
            })
        })
        .collect()
}

fn range(e: &Entry) -> Result<(f64, f64)> {
    let v: Vec<f64> = list(e, "numbers")?;
    match v[..] {
        [lo, hi] if lo.is_finite() && hi.is_finite() => Ok((lo, hi)),
        _ => Err(err(
            e.line,
            format!("{}: expected two finite numbers 'lo, hi'", e.key),
        )),
    }
}

fn lex(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    let mut section: Option<&'static str> = None;
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("malformed section header '{content}'")))?
                .trim();
            let (known, _) = SECTIONS
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| err(line, format!("unknown section [{name}]")))?;
            section = Some(known);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| {
            err(
                line,
                format!("key '{key}' appears before any section header"),
            )
        })?;
        let keys = SECTIONS
            .iter()
            .find(|(s, _)| *s == sec)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        let known = keys
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| err(line, format!("unknown key '{key}' in section [{sec}]")))?;
        if !seen.insert((sec, known)) {
            return Err(err(
                line,
                format!("duplicate key '{key}' in section [{sec}]"),
            ));
        }
        if value.is_empty() {
            return Err(err(line, format!("{key}: missing value")));
        }
        entries.push(Entry {
            section: sec,
            key: known,
            value: value.to_string(),
            line,
        });
    }
    Ok(entries)
}

impl ExperimentConfig {
    /// Parses a config file. Relative WAV paths are resolved against the
    /// file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text, path.parent())
    }

    /// Parses config text; `base` resolves relative WAV paths.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let entries = lex(text)?;
        let mut cfg = ExperimentConfig::default();
        let mut node_sizes: Option<(Vec<usize>, usize)> = None;
        let mut ref_index: Option<(usize, usize)> = None;
        let mut mode: Option<(String, usize)> = None;
        let mut x_path: Option<(PathBuf, usize)> = None;
        let mut v_path: Option<(PathBuf, usize)> = None;
        let mut axis: Option<(SweepAxis, usize)> = None;
        let mut values: Option<(Vec<f64>, usize)> = None;
        let mut stft_line = 0;
        let mut scene_line = 0;
        let mut ods_line = 0;

        for e in &entries {
            let l = e.line;
            match (e.section, e.key) {
                ("layout", "node_sizes") => node_sizes = Some((list(e, "node sizes")?, l)),
                ("layout", "ref_index") => ref_index = Some((scalar(e, "a microphone index")?, l)),
                ("stft", key) => {
                    stft_line = stft_line.max(l);
                    match key {
                        "sample_rate" => cfg.stft.sample_rate = scalar(e, "a sample rate in Hz")?,
                        "frame_len" => cfg.stft.frame_len = scalar(e, "a frame length")?,
                        _ => cfg.stft.hop = scalar(e, "a hop size")?,
                    }
                }
                ("experiment", "methods") => {
                    let ms: Vec<Method> = list(e, "methods (biased, cw, cw_d, ods)")?;
                    if ms.is_empty() {
                        return Err(err(l, "methods: list is empty"));
                    }
                    cfg.methods = Method::ALL
                        .iter()
                        .copied()
                        .filter(|m| ms.contains(m))
                        .collect();
                }
                ("experiment", "snr_db") => {
                    let v: Vec<f64> = list(e, "numbers")?;
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(err(l, "snr_db: values must be finite"));
                    }
                    cfg.snr_db = v;
                }
                ("experiment", "trials") => {
                    cfg.trials = scalar(e, "a positive integer")?;
                    if cfg.trials == 0 {
                        return Err(err(l, "trials must be at least 1"));
                    }
                }
                ("experiment", "seed") => cfg.seed = scalar(e, "an unsigned 64-bit integer")?,
                ("experiment", "labels") => {
                    cfg.labels = match e.value.as_str() {
                        "oracle" => LabelSource::Oracle,
                        "spp" => LabelSource::Spp,
                        other => {
                            return Err(err(
                                l,
                                format!("labels: expected oracle or spp, got '{other}'"),
                            ))
                        }
                    }
                }
                ("experiment", "spp_threshold") => {
                    cfg.spp_threshold = scalar(e, "a number")?;
                    if !(0.0..=1.0).contains(&cfg.spp_threshold) {
                        return Err(err(l, "spp_threshold must lie in [0, 1]"));
                    }
                }
                ("experiment", _) => cfg.threads = scalar(e, "a thread count")?,
                ("ods", key) => {
                    ods_line = ods_line.max(l);
                    match key {
                        "max_iters" => cfg.ods.max_iters = scalar(e, "an iteration count")?,
                        "tol" => cfg.ods.tol = scalar(e, "a tolerance")?,
                        "starts" => cfg.ods.starts = scalar(e, "a start count")?,
                        "init" => cfg.ods.init = e.value.parse().map_err(|m: String| err(l, m))?,
                        "restart_seed" => {
                            cfg.ods.restart_seed = scalar(e, "an unsigned 64-bit integer")?
                        }
                        _ => cfg.ods.memory = scalar(e, "a history length")?,
                    }
                }
                ("scene", key) => {
                    scene_line = scene_line.max(l);
                    let s = &mut cfg.scene;
                    match key {
                        "frames" => s.frames = scalar(e, "a frame count")?,
                        "segment_frames" => s.segment_frames = scalar(e, "a frame count")?,
                        "magnitude_range" => s.magnitude_range = range(e)?,
                        "phase_spread" => s.phase_spread = scalar(e, "a number")?,
                        "phi_x_range" => s.phi_x_range = range(e)?,
                        "noise_power_range" => s.noise_power_range = range(e)?,
                        "block_coherence" => s.block_coherence = scalar(e, "a number")?,
                        _ => s.epsilon = scalar(e, "a number")?,
                    }
                }
                ("input", "mode") => mode = Some((e.value.clone(), l)),
                ("input", "x_path") => x_path = Some((PathBuf::from(&e.value), l)),
                ("input", _) => v_path = Some((PathBuf::from(&e.value), l)),
                ("output", "dir") => cfg.output.dir = PathBuf::from(&e.value),
                ("output", "results") => cfg.output.results = e.value.clone(),
                ("output", _) => cfg.output.summary = e.value.clone(),
                ("sweep", "axis") => {
                    axis = Some((e.value.parse().map_err(|m: String| err(l, m))?, l));
                }
                ("sweep", _) => values = Some((list(e, "numbers")?, l)),
                _ => unreachable!("lexer only admits known keys"),
            }
        }

        let layout_line = node_sizes
            .as_ref()
            .map(|n| n.1)
            .or(ref_index.map(|r| r.1))
            .unwrap_or(0);
        let sizes = node_sizes
            .map(|n| n.0)
            .unwrap_or_else(|| cfg.layout.node_sizes().to_vec());
        cfg.layout = NodeLayout::new(sizes, ref_index.map_or(0, |r| r.0))
            .map_err(|e| err(layout_line, e.to_string()))?;
        cfg.stft
            .validate()
            .map_err(|e| err(stft_line, e.to_string()))?;
        cfg.scene
            .validate()
            .map_err(|e| err(scene_line, e.to_string()))?;
        if cfg.ods.max_iters == 0 || cfg.ods.starts == 0 || !(cfg.ods.tol > 0.0) {
            return Err(err(
                ods_line,
                "max_iters and starts must be positive and tol must be > 0",
            ));
        }

        if let (None | Some(("synthetic", _)), Some((_, l))) = (
            mode.as_ref().map(|(m, l)| (m.as_str(), *l)),
            x_path.as_ref().or(v_path.as_ref()),
        ) {
            return Err(err(*l, "x_path and v_path are only valid with mode = wav"));
        }
        cfg.input = match mode {
            None => InputMode::Synthetic,
            Some((m, _)) if m == "synthetic" => InputMode::Synthetic,
            Some((m, l)) if m == "wav" => {
                let resolve = |p: Option<(PathBuf, usize)>, key: &str| -> Result<PathBuf> {
                    let (p, pl) = p.ok_or_else(|| err(l, format!("wav mode needs {key}")))?;
                    let full = match base {
                        Some(b) if p.is_relative() => b.join(&p),
                        _ => p,
                    };
                    if !full.exists() {
                        return Err(err(
                            pl,
                            format!("{key}: file {} does not exist", full.display()),
                        ));
                    }
                    Ok(full)
                };
                InputMode::Wav {
                    x_path: resolve(x_path, "x_path")?,
                    v_path: resolve(v_path, "v_path")?,
                }
            }
            Some((m, l)) => {
                return Err(err(
                    l,
                    format!("mode: expected synthetic or wav, got '{m}'"),
                ))
            }
        };

        cfg.sweep = match (axis, values) {
            (None, None) => None,
            (Some((axis, _)), Some((values, l))) => {
                let spec = SweepSpec { axis, values };
                spec.validate().map_err(|m| err(l, m))?;
                Some(spec)
            }
            (Some((_, l)), None) => return Err(err(l, "sweep needs values")),
            (None, Some((_, l))) => return Err(err(l, "sweep needs an axis")),
        };
        Ok(cfg)
    }

    /// Canonical text form; every key is written.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let pair = |(a, b): (f64, f64)| format!("{a}, {b}");
        let _ = writeln!(s, "[layout]");
        let sizes: Vec<String> = self
            .layout
            .node_sizes()
            .iter()
            .map(|n| n.to_string())
            .collect();
        let _ = writeln!(s, "node_sizes = {}", sizes.join(", "));
        let _ = writeln!(s, "ref_index = {}", self.layout.ref_index());
        let _ = writeln!(s, "\n[stft]");
        let _ = writeln!(s, "sample_rate = {}", self.stft.sample_rate);
        let _ = writeln!(s, "frame_len = {}", self.stft.frame_len);
        let _ = writeln!(s, "hop = {}", self.stft.hop);
        let _ = writeln!(s, "\n[experiment]");
        let methods: Vec<&str> = self.methods.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(s, "methods = {}", methods.join(", "));
        let _ = writeln!(s, "snr_db = {}", join(&self.snr_db));
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "labels = {}", self.labels.as_str());
        let _ = writeln!(s, "spp_threshold = {}", self.spp_threshold);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "\n[ods]");
        let _ = writeln!(s, "max_iters = {}", self.ods.max_iters);
        let _ = writeln!(s, "tol = {:e}", self.ods.tol);
        let _ = writeln!(s, "starts = {}", self.ods.starts);
        let _ = writeln!(s, "init = {}", self.ods.init);
        let _ = writeln!(s, "restart_seed = {}", self.ods.restart_seed);
        let _ = writeln!(s, "memory = {}", self.ods.memory);
        let sc = &self.scene;
        let _ = writeln!(s, "\n[scene]");
        let _ = writeln!(s, "frames = {}", sc.frames);
        let _ = writeln!(s, "segment_frames = {}", sc.segment_frames);
        let _ = writeln!(s, "magnitude_range = {}", pair(sc.magnitude_range));
        let _ = writeln!(s, "phase_spread = {}", sc.phase_spread);
        let _ = writeln!(s, "phi_x_range = {}", pair(sc.phi_x_range));
        let _ = writeln!(s, "noise_power_range = {}", pair(sc.noise_power_range));
        let _ = writeln!(s, "block_coherence = {}", sc.block_coherence);
        let _ = writeln!(s, "epsilon = {:e}", sc.epsilon);
        let _ = writeln!(s, "\n[input]");
        match &self.input {
            InputMode::Synthetic => {
                let _ = writeln!(s, "mode = synthetic");
            }
            InputMode::Wav { x_path, v_path } => {
                let _ = writeln!(s, "mode = wav");
                let _ = writeln!(s, "x_path = {}", x_path.display());
                let _ = writeln!(s, "v_path = {}", v_path.display());
            }
        }
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output.dir.display());
        let _ = writeln!(s, "results = {}", self.output.results);
        let _ = writeln!(s, "summary = {}", self.output.summary);
        if let Some(sw) = &self.sweep {
            let _ = writeln!(s, "\n[sweep]");
            let _ = writeln!(s, "axis = {}", sw.axis.as_str());
            let _ = writeln!(s, "values = {}", join(&sw.values));
        }
        s
    }
}

impl SweepSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.values.is_empty() {
            return Err("sweep values are empty".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err("sweep values must be finite".into());
        }
        if matches!(self.axis, SweepAxis::Frames | SweepAxis::Nodes)
            && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0)
        {
            return Err(format!(
                "{} sweep values must be positive integers",
                self.axis.as_str()
            ));
        }
        if self.axis == SweepAxis::Nodes && self.values.iter().any(|v| *v < 2.0) {
            return Err("nodes sweep values must be at least 2".into());
        }
        Ok(())
    }
}
