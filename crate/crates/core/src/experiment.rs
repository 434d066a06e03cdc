//! Batch experiment driver: scene or WAV input, covariance estimation, RTF
//! estimation, MVDR filtering and metrics for every trial, method and SNR.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::beamformer::{apply, mvdr_weights, BeamformerWeights};
use crate::covariance::{self, sample_covariance, FrameLabels};
use crate::error::{Error, Result};
use crate::estimators::{estimate_rtf, Method};
use crate::exec::Exec;
use crate::io::config::{ExperimentConfig, InputMode, LabelSource, SweepAxis, SweepSpec};
use crate::io::csv::{self, ResultRow, SummaryRow};
use crate::io::wav::{read_wav_channels, write_wav};
use crate::layout::NodeLayout;
use crate::linalg::HermitianMatrix;
use crate::metrics::{hermitian_angle, MetricReport};
use crate::scene::{
    ground_truth_rtf, mix_at_snr, oracle_covariances, random_scene, sample_frames_with,
};
use crate::seed;
use crate::stft::{analyze, synthesize, SpectrogramTensor};

/// Frames whose reference-channel speech energy is within this many dB of
/// the loudest frame count as speech-active in WAV mode.
pub const WAV_ACTIVITY_DB: f64 = -30.0;

/// Progress sink; receives one line per finished unit of work.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

/// Speech and noise components plus everything needed to score estimates.
struct Material {
    x: SpectrogramTensor,
    v: SpectrogramTensor,
    /// Speech-active frames, used for SNR calibration and oracle labels.
    active: Vec<bool>,
    oracle_labels: FrameLabels,
    /// Ground-truth RTF per bin; `None` where it is undefined.
    truth: Vec<Option<Vec<Complex64>>>,
}

fn synthetic_material(cfg: &ExperimentConfig, trial_seed: u64, exec: Exec) -> Result<Material> {
    let scene = random_scene(&cfg.layout, cfg.stft, &cfg.scene, trial_seed)?;
    let sampled = sample_frames_with(&scene, exec)?;
    let oracle = oracle_covariances(&scene);
    let truth = oracle
        .rx
        .iter()
        .map(|rx| ground_truth_rtf(rx, &cfg.layout).ok().map(|e| e.h_hat))
        .collect();
    Ok(Material {
        x: sampled.x,
        v: sampled.v,
        active: scene.speech_gating,
        oracle_labels: sampled.labels,
        truth,
    })
}

/// Frame activity from the reference-channel energy of the speech component.
pub fn energy_activity(x: &SpectrogramTensor, channel: usize, floor_db: f64) -> Vec<bool> {
    let energy: Vec<f64> = (0..x.frames())
        .map(|l| (0..x.bins()).map(|k| x.get(channel, k, l).norm_sqr()).sum())
        .collect();
    let peak = energy.iter().copied().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(floor_db / 10.0);
    energy.iter().map(|&e| peak > 0.0 && e >= floor).collect()
}

fn wav_material(
    cfg: &ExperimentConfig,
    x_path: &Path,
    v_path: &Path,
    exec: Exec,
) -> Result<Material> {
    let m = cfg.layout.num_mics();
    let xw = read_wav_channels(x_path, m)?;
    let vw = read_wav_channels(v_path, m)?;
    for (w, p) in [(&xw, x_path), (&vw, v_path)] {
        if w.sample_rate != cfg.stft.sample_rate {
            return Err(Error::Format {
                path: p.to_path_buf(),
                message: format!(
                    "sample rate {} differs from configured {}",
                    w.sample_rate, cfg.stft.sample_rate
                ),
            });
        }
    }
    if xw.len() != vw.len() {
        return Err(Error::Shape(format!(
            "speech file has {} samples, noise file {}",
            xw.len(),
            vw.len()
        )));
    }
    let x = analyze(&xw.channels, cfg.stft)?;
    let v = analyze(&vw.channels, cfg.stft)?;
    let active = energy_activity(&x, cfg.layout.ref_index(), WAV_ACTIVITY_DB);
    let truth = exec.map(x.bins(), |k| {
        let (rx, n) = sample_covariance(&x, k, |l| active[l]);
        if n == 0 {
            return None;
        }
        ground_truth_rtf(&rx, &cfg.layout).ok().map(|e| e.h_hat)
    });
    Ok(Material {
        oracle_labels: FrameLabels::from_gating(x.bins(), &active),
        x,
        v,
        active,
        truth,
    })
}

fn score_method(
    cfg: &ExperimentConfig,
    method: Method,
    material: &Material,
    noise: &SpectrogramTensor,
    ry: &[HermitianMatrix],
    rv: &[HermitianMatrix],
    exec: Exec,
) -> Result<(ResultRow, usize)> {
    let layout = &cfg.layout;
    let r = layout.ref_index();
    let m = layout.num_mics();
    let per_bin = exec.map(ry.len(), |k| {
        let est = estimate_rtf(method, &ry[k], &rv[k], layout, &cfg.ods.for_bin(k))?;
        let w = mvdr_weights(&est.h_hat, &rv[k])?;
        Ok::<_, Error>((est, w))
    });

    let mut weights = BeamformerWeights::selector(ry.len(), m, r);
    let mut angles = Vec::with_capacity(ry.len());
    let mut failures = 0;
    let mut first_error = None;
    let mut iterations = 0;
    let mut converged = true;
    for (k, outcome) in per_bin.into_iter().enumerate() {
        match outcome {
            Ok((est, w)) => {
                iterations += est.diagnostics.iterations;
                converged &= est.diagnostics.converged;
                angles.push(
                    material.truth[k]
                        .as_ref()
                        .and_then(|h| hermitian_angle(h, &est.h_hat).ok()),
                );
                weights.w[k] = w;
            }
            Err(e) => {
                failures += 1;
                first_error.get_or_insert_with(|| format!("bin {k}: {e}"));
                angles.push(None);
            }
        }
    }
    let zx = apply(&weights, &material.x)?;
    let zv = apply(&weights, noise)?;
    let report = MetricReport::compute(angles, &zx, &zv, &material.x, noise)?;
    let is_ods = method == Method::Ods;
    Ok((
        ResultRow {
            trial: 0,
            method,
            snr_in_db: 0.0,
            mean_angle: Some(report.mean_angle),
            delta_snr_broadband: Some(report.delta_snr_broadband_db),
            delta_snr_weighted: Some(report.delta_snr_weighted_db),
            ods_iterations: is_ods.then_some(iterations),
            ods_converged: is_ods.then_some(converged && failures == 0),
            error: first_error
                .map(|e| format!("{failures} bins fell back to the reference channel; {e}")),
        },
        failures,
    ))
}

fn run_condition(
    cfg: &ExperimentConfig,
    trial: usize,
    snr: f64,
    material: &Material,
    exec: Exec,
) -> Vec<ResultRow> {
    let fail_all = |e: Error| -> Vec<ResultRow> {
        cfg.methods
            .iter()
            .map(|&m| ResultRow::failed(trial, m, snr, e.to_string()))
            .collect()
    };
    let mix = match mix_at_snr(
        &material.x,
        &material.v,
        snr,
        cfg.layout.ref_index(),
        Some(&material.active),
    ) {
        Ok(m) => m,
        Err(e) => return fail_all(e),
    };
    let labels = match cfg.labels {
        LabelSource::Oracle => Ok(material.oracle_labels.clone()),
        LabelSource::Spp => covariance::spp(&mix.y, &cfg.layout.first_mics(), &cfg.layout)
            .and_then(|p| covariance::classify(&p, cfg.spp_threshold)),
    };
    let cov = match labels.and_then(|l| covariance::estimate_with(&mix.y, &l, exec)) {
        Ok(c) => c,
        Err(e) => return fail_all(e),
    };
    cfg.methods
        .iter()
        .map(
            |&method| match score_method(cfg, method, material, &mix.v, &cov.ry, &cov.rv, exec) {
                Ok((mut row, _)) => {
                    row.trial = trial;
                    row.snr_in_db = snr;
                    row
                }
                Err(e) => ResultRow::failed(trial, method, snr, e.to_string()),
            },
        )
        .collect()
}

/// Seed of trial `t`.
pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    seed::derive(cfg.seed, trial as u64)
}

/// Runs every trial x SNR x method. Rows come back sorted by trial, then
/// method in canonical order, then SNR in configuration order.
pub fn run(cfg: &ExperimentConfig, exec: Exec, progress: Progress) -> Result<Vec<ResultRow>> {
    if cfg.snr_db.is_empty() {
        return Err(Error::Parameter("snr list is empty".into()));
    }
    let per_trial = exec.try_map(cfg.trials, |t| -> Result<Vec<ResultRow>> {
        let material = match &cfg.input {
            InputMode::Synthetic => synthetic_material(cfg, trial_seed(cfg, t), exec)?,
            InputMode::Wav { x_path, v_path } => wav_material(cfg, x_path, v_path, exec)?,
        };
        let mut rows: Vec<ResultRow> = cfg
            .snr_db
            .iter()
            .flat_map(|&snr| run_condition(cfg, t, snr, &material, exec))
            .collect();
        rows.sort_by_key(|r| Method::ALL.iter().position(|m| *m == r.method));
        progress(&format!("trial {}/{} done", t + 1, cfg.trials));
        Ok(rows)
    })?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Cycles `base` node sizes to produce a layout with `nodes` nodes.
pub fn cycled_layout(base: &NodeLayout, nodes: usize) -> Result<NodeLayout> {
    let sizes: Vec<usize> = base
        .node_sizes()
        .iter()
        .copied()
        .cycle()
        .take(nodes)
        .collect();
    let total: usize = sizes.iter().sum();
    NodeLayout::new(sizes, base.ref_index().min(total.saturating_sub(1)))
}

/// Config for one point of a sweep.
pub fn sweep_point(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    out.sweep = None;
    match axis {
        SweepAxis::Snr => out.snr_db = vec![value],
        SweepAxis::Frames => {
            out.scene.frames = value as usize;
            out.scene.validate()?;
        }
        SweepAxis::Nodes => out.layout = cycled_layout(&cfg.layout, value as usize)?,
    }
    Ok(out)
}

/// Result rows for each sweep value, in value order.
pub fn sweep(
    cfg: &ExperimentConfig,
    spec: &SweepSpec,
    exec: Exec,
    progress: Progress,
) -> Result<Vec<(f64, Vec<ResultRow>)>> {
    spec.validate().map_err(Error::Parameter)?;
    spec.values
        .iter()
        .map(|&v| {
            let point = sweep_point(cfg, spec.axis, v)?;
            let rows = run(&point, exec, progress)?;
            progress(&format!("{} = {} done", spec.axis.as_str(), v));
            Ok((v, rows))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the result and summary CSVs of a run; returns their paths.
pub fn write_run(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<(PathBuf, PathBuf)> {
    let results = cfg.output.dir.join(&cfg.output.results);
    let summary = cfg.output.dir.join(&cfg.output.summary);
    let items: Vec<(Vec<String>, &ResultRow)> = rows.iter().map(|r| (Vec::new(), r)).collect();
    csv::write_results(create(&results)?, &[], &items)?;
    csv::write_summary(
        create(&summary)?,
        &[],
        &[(Vec::new(), csv::summarize(rows))],
    )?;
    Ok((results, summary))
}

/// Long-format sweep CSVs with leading `axis,value` columns.
pub fn write_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    points: &[(f64, Vec<ResultRow>)],
) -> Result<(PathBuf, PathBuf)> {
    let results = cfg.output.dir.join(format!("sweep_{}", cfg.output.results));
    let summary = cfg.output.dir.join(format!("sweep_{}", cfg.output.summary));
    let lead = |v: f64| vec![axis.as_str().to_string(), v.to_string()];
    let items: Vec<(Vec<String>, &ResultRow)> = points
        .iter()
        .flat_map(|(v, rows)| rows.iter().map(move |r| (lead(*v), r)))
        .collect();
    csv::write_results(create(&results)?, &["axis", "value"], &items)?;
    let groups: Vec<(Vec<String>, Vec<SummaryRow>)> = points
        .iter()
        .map(|(v, rows)| (lead(*v), csv::summarize(rows)))
        .collect();
    csv::write_summary(create(&summary)?, &["axis", "value"], &groups)?;
    Ok((results, summary))
}

/// Files written by [`simulate`].
#[derive(Clone, Debug)]
pub struct SimulationFiles {
    pub scene: PathBuf,
    pub x_wav: PathBuf,
    pub v_wav: PathBuf,
    pub labels: PathBuf,
}

/// Generates the trial-0 scene and writes `scene.json`, the time-domain
/// speech and noise components and the oracle labels into `dir`.
pub fn simulate(cfg: &ExperimentConfig, dir: &Path, exec: Exec) -> Result<SimulationFiles> {
    if cfg.input != InputMode::Synthetic {
        return Err(Error::Parameter("simulate needs mode = synthetic".into()));
    }
    let scene = random_scene(&cfg.layout, cfg.stft, &cfg.scene, trial_seed(cfg, 0))?;
    let sampled = sample_frames_with(&scene, exec)?;
    std::fs::create_dir_all(dir)?;
    let files = SimulationFiles {
        scene: dir.join("scene.json"),
        x_wav: dir.join("x.wav"),
        v_wav: dir.join("v.wav"),
        labels: dir.join("labels.csv"),
    };
    scene.save(&files.scene)?;
    write_wav(&files.x_wav, &synthesize(&sampled.x)?, cfg.stft.sample_rate)?;
    write_wav(&files.v_wav, &synthesize(&sampled.v)?, cfg.stft.sample_rate)?;
    let mut w = create(&files.labels)?;
    sampled.labels.write_csv(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(files)
}
