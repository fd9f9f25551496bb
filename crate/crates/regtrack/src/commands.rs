//! Subcommand implementations. Each returns the text to print on stdout.

use std::path::{Path, PathBuf};

use regtrack_core::loss::{bce_loss, corr_loss, inlier_labels, trans_loss};
use regtrack_core::nn::WeightStore;
use regtrack_core::reg::register;
use regtrack_core::sim::metrics::{precision_auc, success_auc};
use regtrack_core::sim::track::{frame_pair, pair_gt_transform};
use regtrack_core::sim::{
    precision_metric, run_tracker, success_metric, synth_sequence, TrackerWeights,
};
use serde_json::json;

use crate::config::{config_error, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{self, fixed};
use crate::report::{
    frames_csv, summary_csv, summary_table, Manifest, ReportFile, Seeds, SummaryRow,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Seeded weights, or the weight file named by the configuration.
pub fn load_weights(cfg: &RunConfig) -> Result<TrackerWeights> {
    match &cfg.weights {
        Some(path) => {
            let store = io::read_weights(path)?;
            TrackerWeights::read_from(&store).map_err(|e| CliError::data(path, e.to_string()))
        }
        None => Ok(TrackerWeights::seeded(
            cfg.dim,
            cfg.iterations,
            cfg.weight_seed,
        )),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn write_manifest(
    out: &Path,
    command: &str,
    inputs: &[PathBuf],
    options: Vec<(String, String)>,
    cfg: &RunConfig,
    sequences: Vec<u64>,
) -> Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        inputs: inputs.iter().map(|p| absolute(p)).collect(),
        options,
        config: cfg
            .pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        seeds: Seeds {
            seed: cfg.seed,
            weight_seed: cfg.weight_seed,
            sequences,
        },
    };
    io::write_text(&out.join(MANIFEST_FILE), &manifest.to_json())
}

/// Writes `count` sequences `seq_%04d` with seeds `seed, seed + 1, ...`.
pub fn synth(cfg: &RunConfig, out: &Path, count: usize, ply: bool) -> Result<String> {
    let mut seeds = Vec::with_capacity(count);
    for i in 0..count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let seq = synth_sequence(&cfg.sequence, seed).map_err(config_error)?;
        io::write_sequence(&out.join(format!("seq_{i:04}")), &seq, ply)?;
        seeds.push(seed);
    }
    let options = vec![
        ("count".into(), count.to_string()),
        ("ply".into(), ply.to_string()),
    ];
    write_manifest(out, "synth", &[], options, cfg, seeds)?;
    Ok(format!("wrote {count} sequence(s) to {}\n", out.display()))
}

/// Registers `template` onto `search` (both already in a shared frame).
pub fn register_files(
    cfg: &RunConfig,
    template: &Path,
    search: &Path,
    out: Option<&Path>,
) -> Result<String> {
    let x = io::read_xyz(template)?;
    let y = io::read_xyz(search)?;
    if x.is_empty() {
        return Err(CliError::data(template, "no points"));
    }
    if y.is_empty() {
        return Err(CliError::data(search, "no points"));
    }
    let weights = load_weights(cfg)?;
    let r = register(&x, &y, &cfg.tracker.registration, &weights.registration)?;
    let rot = r.transform.rotation;
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| rot[(i, j)]).collect())
        .collect();
    let text = serde_json::to_string_pretty(&json!({
        "rotation": rows,
        "translation": [r.transform.translation.x, r.transform.translation.y, r.transform.translation.z],
        "yaw": r.transform.yaw().angle,
        "degenerate": r.degenerate_flag,
        "kept_template": r.kept_template_indices.len(),
        "kept_search": r.kept_search_indices.len(),
    }))
    .expect("plain data serialises")
        + "\n";
    if let Some(out) = out {
        io::write_text(&out.join("registration.json"), &text)?;
        write_manifest(
            out,
            "register",
            &[template.into(), search.into()],
            Vec::new(),
            cfg,
            Vec::new(),
        )?;
    }
    Ok(text)
}

fn sequence_name(dir: &Path) -> String {
    absolute(dir)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into())
}

/// Tracks every sequence under `inputs` in every configured mode.
pub fn track(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<String> {
    let dirs = io::sequence_dirs(inputs)?;
    let weights = load_weights(cfg)?;
    let sequences = dirs
        .iter()
        .map(|d| io::read_sequence(d))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let tracker = cfg.tracker_for(mode);
        let (mut success, mut precision) = (0.0, 0.0);
        for (dir, seq) in dirs.iter().zip(&sequences) {
            let report = run_tracker(seq, &tracker, &weights)?;
            let name = sequence_name(dir);
            let target = out.join(mode.as_str()).join(&name);
            io::write_text(
                &target.join("report.json"),
                &ReportFile::new(&name, mode, &report).to_json(),
            )?;
            io::write_text(&target.join("frames.csv"), &frames_csv(&report))?;
            success += report.success;
            precision += report.precision;
        }
        let n = sequences.len() as f64;
        rows.push(SummaryRow {
            mode: mode.as_str().to_string(),
            sequences: sequences.len(),
            success: success / n,
            precision: precision / n,
        });
    }
    io::write_text(&out.join("summary.csv"), &summary_csv(&rows))?;
    let seeds = sequences.iter().map(|s| s.seed).collect();
    write_manifest(out, "track", inputs, Vec::new(), cfg, seeds)?;
    Ok(summary_table(&rows))
}

/// Registration losses per consecutive frame pair (template cropped at the
/// previous ground-truth box), plus metrics of an optional report.
pub fn eval(
    cfg: &RunConfig,
    dir: &Path,
    report: Option<&Path>,
    out: Option<&Path>,
) -> Result<String> {
    let seq = io::read_sequence(dir)?;
    let weights = load_weights(cfg)?;
    let tracker = cfg.tracker_for(cfg.modes[0]);
    let mut pairs = Vec::new();
    let (mut sums, mut count) = ([0.0; 3], 0usize);
    for t in 1..seq.frames.len() {
        let prev = seq.gt_boxes[t - 1];
        let Some(pair) = frame_pair(&seq, t, &prev, &tracker)? else {
            pairs.push(json!({ "frame": t, "empty": true }));
            continue;
        };
        let mut reg_cfg = tracker.registration.clone();
        reg_cfg.descriptor.context_floor = tracker.ground_margin.map(|m| -prev.size.h / 2.0 - m);
        let r = register(
            &pair.template,
            &pair.search,
            &reg_cfg,
            &weights.registration,
        )?;
        let truth = pair_gt_transform(&pair);
        let labels = inlier_labels(
            &pair.template.points,
            &pair.search.points,
            &truth,
            reg_cfg.tau,
        )?;
        let bce = bce_loss(&r.template_scores, &r.search_scores, &labels)?;
        let kept: Vec<_> = r
            .kept_template_indices
            .iter()
            .map(|&i| pair.template.points[i])
            .collect();
        let corr = corr_loss(&kept, &truth, &r.soft_correspondences)?;
        let trans = trans_loss(&r.transform, &truth);
        for (s, v) in sums.iter_mut().zip([bce, corr, trans]) {
            *s += v;
        }
        count += 1;
        pairs.push(json!({
            "frame": t,
            "bce": fixed(bce),
            "corr": fixed(corr),
            "trans": fixed(trans),
            "degenerate": r.degenerate_flag,
        }));
    }
    let mean = |k: usize| {
        if count > 0 {
            fixed(sums[k] / count as f64)
        } else {
            0.0
        }
    };
    let mut result = json!({
        "sequence": sequence_name(dir),
        "pairs": pairs,
        "mean": { "bce": mean(0), "corr": mean(1), "trans": mean(2) },
    });
    let mut inputs = vec![dir.to_path_buf()];
    if let Some(path) = report {
        let file: ReportFile = serde_json::from_str(&io::read_text(path)?)
            .map_err(|e| CliError::data(path, e.to_string()))?;
        if file.frames.is_empty() {
            return Err(CliError::data(path, "report has no frames"));
        }
        let ious: Vec<f64> = file.frames.iter().map(|f| f.iou).collect();
        let dists: Vec<f64> = file.frames.iter().map(|f| f.center_error).collect();
        result["metrics"] = json!({
            "success": fixed(success_metric(&ious)),
            "precision": fixed(precision_metric(&dists)),
            "success_auc_1000": fixed(success_auc(&ious, 1000)),
            "precision_auc_1000": fixed(precision_auc(&dists, 1000)),
        });
        inputs.push(path.to_path_buf());
    }
    let text = serde_json::to_string_pretty(&result).expect("plain data serialises") + "\n";
    if let Some(out) = out {
        io::write_text(&out.join("eval.json"), &text)?;
        write_manifest(out, "eval", &inputs, Vec::new(), cfg, vec![seq.seed])?;
    }
    Ok(text)
}

/// Writes the configured weights (seeded or loaded) to `path`.
pub fn weights(cfg: &RunConfig, path: &Path) -> Result<String> {
    let mut store = WeightStore::new();
    load_weights(cfg)?.write_to(&mut store);
    io::write_weights(path, &store)?;
    Ok(format!(
        "wrote {} layers to {}\n",
        store.len(),
        path.display()
    ))
}

/// Replays a manifest, writing outputs under `out`.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<String> {
    let manifest: Manifest = serde_json::from_str(&io::read_text(manifest_path)?)
        .map_err(|e| CliError::data(manifest_path, e.to_string()))?;
    let mut cfg = RunConfig::default();
    for (k, v) in &manifest.config {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let option = |name: &str| {
        manifest
            .options
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    };
    let bad = |what: &str| CliError::data(manifest_path, what.to_string());
    match manifest.command.as_str() {
        "synth" => {
            let count = option("count")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("missing count"))?;
            synth(&cfg, out, count, option("ply") == Some("true"))
        }
        "track" => track(&cfg, &manifest.inputs, out),
        "register" => match &manifest.inputs[..] {
            [a, b] => register_files(&cfg, a, b, Some(out)),
            _ => Err(bad("register needs two inputs")),
        },
        "eval" => match &manifest.inputs[..] {
            [dir] => eval(&cfg, dir, None, Some(out)),
            [dir, report] => eval(&cfg, dir, Some(report), Some(out)),
            _ => Err(bad("eval needs one or two inputs")),
        },
        other => Err(bad(&format!("unknown command `{other}`"))),
    }
}
