use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalResult, Embedder};
use crate::spectral::{compose_seg, Image, ImageKind, SegConfig};
use crate::train::run::{
    apply_style, build_datasets, load_model, load_run_config, EpochRecord, LAST_CHECKPOINT, METRICS_FILE,
    SUMMARY_FILE,
};
use crate::train::{Preset, RunSummary};

pub const REPORT_FILE: &str = "report.md";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub report: PathBuf,
    /// Embedding dumps written, one per run.
    pub embeddings: Vec<PathBuf>,
    /// Number of runs summarised.
    pub runs: usize,
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn read_summary(run_dir: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(require(run_dir.join(SUMMARY_FILE))?)?;
    Ok(serde_json::from_str(&text)?)
}

fn read_metrics(run_dir: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(require(run_dir.join(METRICS_FILE))?)?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(EpochRecord::parse_csv_row).collect()
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn preset_line(active: Option<Preset>) -> String {
    let names: Vec<String> = Preset::ALL.iter().map(|p| format!("`{}`", p.name())).collect();
    match active {
        Some(p) => format!("Presets: {} (this run: `{}`)\n", names.join(", "), p.name()),
        None => format!("Presets: {}\n", names.join(", ")),
    }
}

fn eval_row(r: &EvalResult) -> String {
    format!(
        "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
        r.protocol,
        r.num_queries,
        r.num_gallery,
        pct(r.rank(1)),
        pct(r.rank(5)),
        pct(r.rank(10)),
        pct(r.rank(20)),
        pct(r.map)
    )
}

/// Writes the test-set descriptors of the final model, one row per image.
fn write_embeddings(run_dir: &Path) -> Result<PathBuf> {
    let cfg = load_run_config(run_dir)?;
    let model = load_model(&cfg, require(run_dir.join(LAST_CHECKPOINT))?)?;
    let (_, test) = build_datasets(&cfg)?;
    let test = apply_style(&test, &cfg.visible_style())?;
    let desc = model.embed(&test.images.iter().collect::<Vec<_>>())?;
    let path = run_dir.join(EMBEDDINGS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    write!(w, "identity,modality,path")?;
    for d in 0..desc.dim {
        write!(w, ",d{d}")?;
    }
    writeln!(w)?;
    for (i, r) in test.index.records.iter().enumerate() {
        write!(w, "{},{},{}", r.identity, r.modality, r.path.display())?;
        for v in desc.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(path)
}

fn single_report(run_dir: &Path) -> Result<(String, RunSummary)> {
    let summary = read_summary(run_dir)?;
    let metrics = read_metrics(run_dir)?;
    let cfg = load_run_config(run_dir)?;
    let mut md = String::new();
    writeln!(md, "# Run report: `{}` (seed {})\n", summary.preset.name(), summary.seed).ok();
    md.push_str(&preset_line(Some(summary.preset)));
    writeln!(
        md,
        "\n{} epochs, {} iterations, {} parameters, {} training / {} held-out identities.\n",
        summary.epochs, summary.iterations, summary.num_parameters, summary.train_identities, summary.test_identities
    )
    .ok();
    writeln!(md, "## Configuration\n\n```toml\n{}```\n", cfg.to_toml_string()?).ok();
    md.push_str("## Per-epoch V-2-I retrieval on held-out identities\n\n");
    md.push_str("| epoch | lr | loss | Rank-1 | Rank-5 | Rank-10 | mAP |\n|---|---|---|---|---|---|---|\n");
    for m in &metrics {
        writeln!(
            md,
            "| {} | {:.6} | {:.4} | {} | {} | {} | {} |",
            m.epoch,
            m.lr,
            m.total,
            pct(m.rank1),
            pct(m.rank5),
            pct(m.rank10),
            pct(m.map)
        )
        .ok();
    }
    md.push_str("\n## Final model\n\n");
    md.push_str("| protocol | queries | gallery | Rank-1 | Rank-5 | Rank-10 | Rank-20 | mAP |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    md.push_str(&eval_row(&summary.final_v2i));
    md.push_str(&eval_row(&summary.final_i2v));
    writeln!(
        md,
        "\nBest checkpoint: epoch {} with V-2-I Rank-1 {}.",
        summary.best_epoch,
        pct(summary.best_rank1)
    )
    .ok();
    Ok((md, summary))
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn aggregate_report(runs: &[(PathBuf, RunSummary)]) -> String {
    let mut md = String::from("# Ablation report\n\n");
    md.push_str(&preset_line(None));
    md.push_str("\nMean over runs of the final-epoch model (percent).\n\n");
    md.push_str("| preset | runs | seeds | V-2-I Rank-1 | V-2-I mAP | I-2-V Rank-1 | I-2-V mAP |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for preset in Preset::ALL {
        let rs: Vec<&RunSummary> = runs.iter().map(|(_, s)| s).filter(|s| s.preset == preset).collect();
        let cell = |f: &dyn Fn(&RunSummary) -> f64| mean(rs.iter().map(|s| f(s))).map_or("-".to_string(), pct);
        let seeds: Vec<String> = rs.iter().map(|s| s.seed.to_string()).collect();
        writeln!(
            md,
            "| `{}` | {} | {} | {} | {} | {} | {} |",
            preset.name(),
            rs.len(),
            if seeds.is_empty() { "-".to_string() } else { seeds.join(" ") },
            cell(&|s| s.final_v2i.rank1()),
            cell(&|s| s.final_v2i.map),
            cell(&|s| s.final_i2v.rank1()),
            cell(&|s| s.final_i2v.map),
        )
        .ok();
    }
    md.push_str("\n## Runs\n\n");
    for (dir, s) in runs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        writeln!(
            md,
            "- `{name}`: `{}` seed {}, V-2-I Rank-1 {}, mAP {}",
            s.preset.name(),
            s.seed,
            pct(s.final_v2i.rank1()),
            pct(s.final_v2i.map)
        )
        .ok();
    }
    md
}

/// Writes `report.md` (and `embeddings.csv` per run) for a run directory,
/// or for every run below a parent directory plus an ablation table.
pub fn emit_report(run_dir: impl AsRef<Path>) -> Result<ReportOutput> {
    let run_dir = run_dir.as_ref();
    if run_dir.join(SUMMARY_FILE).is_file() {
        let (md, _) = single_report(run_dir)?;
        let embeddings = write_embeddings(run_dir)?;
        let report = run_dir.join(REPORT_FILE);
        std::fs::write(&report, md)?;
        return Ok(ReportOutput {
            report,
            embeddings: vec![embeddings],
            runs: 1,
        });
    }
    let mut children: Vec<PathBuf> = if run_dir.is_dir() {
        std::fs::read_dir(run_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SUMMARY_FILE).is_file())
            .collect()
    } else {
        Vec::new()
    };
    if children.is_empty() {
        return Err(Error::MissingArtifact(run_dir.join(SUMMARY_FILE)));
    }
    children.sort();
    let mut runs = Vec::new();
    let mut embeddings = Vec::new();
    for child in children {
        let (md, summary) = single_report(&child)?;
        std::fs::write(child.join(REPORT_FILE), md)?;
        embeddings.push(write_embeddings(&child)?);
        runs.push((child, summary));
    }
    let report = run_dir.join(REPORT_FILE);
    std::fs::write(&report, aggregate_report(&runs))?;
    Ok(ReportOutput {
        report,
        embeddings,
        runs: runs.len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegExport {
    /// Relative paths written under the output folder.
    pub written: Vec<PathBuf>,
    /// Relative paths that could not be converted, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn collect_pngs(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_pngs(root, &p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

/// Converts every PNG below `input` into a SEG image at the same relative
/// path below `output`. Grey inputs are replicated to three channels first.
pub fn export_seg(input: impl AsRef<Path>, output: impl AsRef<Path>, weight: f64) -> Result<SegExport> {
    let (input, output) = (input.as_ref(), output.as_ref());
    if !input.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", input.display())));
    }
    let cfg = SegConfig::with_weight(weight);
    if weight < 0.0 {
        return Err(Error::Config(format!("seg weight must be >= 0, got {weight}")));
    }
    let mut files = Vec::new();
    collect_pngs(input, input, &mut files)?;
    let mut report = SegExport::default();
    for rel in files {
        let converted = Image::load_png(input.join(&rel), ImageKind::Visible)
            .and_then(|img| compose_seg(&img.to_three_channels(), &cfg));
        match converted {
            Ok(seg) => {
                let dst = output.join(&rel);
                if let Some(parent) = dst.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                seg.save_png(dst)?;
                report.written.push(rel);
            }
            Err(e) => {
                warn!("skipping {}: {e}", rel.display());
                report.skipped.push((rel, e.to_string()));
            }
        }
    }
    Ok(report)
}

