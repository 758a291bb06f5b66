//! Accuracy metrics over a labeled sector dataset: confusion matrix,
//! per-class and grouped accuracy, report files (JSON, CSV, SVG).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_policy, AugmentError, AugmentPolicy};
use crate::byte2image::{sector_to_image, ImageError};
use crate::corpus::SectorDataset;
use crate::model::{images_to_tensor, bytes_to_tensor, BranchMode, ByteNetModel, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class space mismatch: {0}")]
    ClassSpaceMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    FormatError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub sample_count: usize,
    /// Micro-averaged: trace(confusion) / sample_count.
    pub overall_accuracy: f64,
    /// Per class; `None` where the dataset has no samples of that class.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean of the non-null per-class accuracies.
    pub macro_accuracy: f64,
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<usize>>,
    /// Superclass aggregation when the dataset carries group tags.
    pub grouped: Option<GroupedConfusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedConfusion {
    pub group_names: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy deltas between two reports over the same class space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub overall: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Deterministic argmax with lowest-index tie break.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Run the model in evaluation mode (normalize-only augmentation) over the
/// dataset and assemble the full report.
pub fn evaluate(
    model: &ByteNetModel<f32>,
    policy: &AugmentPolicy,
    ds: &SectorDataset,
    batch_size: usize,
    mode: BranchMode,
) -> Result<EvalReport, EvalError> {
    if ds.num_classes() != model.config.num_classes {
        return Err(EvalError::ClassSpaceMismatch(format!(
            "dataset has {} classes, model expects {}",
            ds.num_classes(),
            model.config.num_classes
        )));
    }
    if ds.sector_size != model.config.sector_size {
        return Err(EvalError::ClassSpaceMismatch(format!(
            "dataset sector size {}, model expects {}",
            ds.sector_size, model.config.sector_size
        )));
    }
    let t = ds.num_classes();
    let mut confusion = vec![vec![0usize; t]; t];
    let mut rng = crate::corpus::derive_rng(0, &[]); // unused in eval mode
    for (bytes, labels) in ds.batch_iter(batch_size, None) {
        let images: Result<Vec<_>, _> = bytes
            .iter()
            .map(|s| sector_to_image(s, model.config.ngram_n))
            .collect();
        let samples = apply_policy(&images?, &labels, t, policy, false, &mut rng)?;
        let imgs: Vec<_> = samples.into_iter().map(|s| s.image).collect();
        let out = model.forward(
            &bytes_to_tensor(&bytes),
            &images_to_tensor(&imgs),
            false,
            mode,
        )?;
        for (row, &label) in out.to_vec().chunks(t).zip(&labels) {
            confusion[label][argmax(row)] += 1;
        }
    }
    Ok(build_report(ds, confusion))
}

/// Assemble report fields from a finished confusion matrix.
pub fn build_report(ds: &SectorDataset, confusion: Vec<Vec<usize>>) -> EvalReport {
    let t = confusion.len();
    let sample_count: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..t).map(|i| confusion[i][i]).sum();
    let per_class_accuracy: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| confusion[i][i] as f64 / support as f64)
        })
        .collect();
    let known: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
    let macro_accuracy = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    let grouped = ds.group_tags.as_ref().map(|tags| {
        // class -> group index; untagged classes form their own group
        let group_of: Vec<String> = ds
            .class_names
            .iter()
            .map(|n| tags.get(n).cloned().unwrap_or_else(|| n.clone()))
            .collect();
        let mut group_names: Vec<String> = group_of.clone();
        group_names.sort();
        group_names.dedup();
        let index: BTreeMap<&str, usize> = group_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let g = group_names.len();
        let mut gconf = vec![vec![0usize; g]; g];
        for (i, row) in confusion.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                gconf[index[group_of[i].as_str()]][index[group_of[j].as_str()]] += count;
            }
        }
        GroupedConfusion {
            group_names,
            confusion: gconf,
        }
    });
    EvalReport {
        class_names: ds.class_names.clone(),
        sample_count,
        overall_accuracy: if sample_count == 0 {
            0.0
        } else {
            trace as f64 / sample_count as f64
        },
        per_class_accuracy,
        macro_accuracy,
        confusion,
        grouped,
    }
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<DeltaTable, EvalError> {
    if a.class_names != b.class_names {
        return Err(EvalError::ClassSpaceMismatch(format!(
            "{:?} vs {:?}",
            a.class_names, b.class_names
        )));
    }
    let per_class = a
        .per_class_accuracy
        .iter()
        .zip(&b.per_class_accuracy)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        })
        .collect();
    Ok(DeltaTable {
        overall: a.overall_accuracy - b.overall_accuracy,
        per_class,
    })
}

/// Write `metrics.json`, `confusion.csv`, `confusion.svg`, and (when a
/// training metrics log is supplied) `accuracy_curve.svg` into `dir`.
pub fn emit_report(
    report: &EvalReport,
    train_log: Option<&Path>,
    dir: &Path,
) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| EvalError::FormatError(e.to_string()))?;
    std::fs::write(dir.join("metrics.json"), json)?;

    let mut csv = String::new();
    csv.push(',');
    csv.push_str(&report.class_names.join(","));
    csv.push('\n');
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        csv.push_str(name);
        for v in row {
            csv.push(',');
            csv.push_str(&v.to_string());
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("confusion.csv"), csv)?;

    write_confusion_svg(report, &dir.join("confusion.svg"))?;
    if let Some(log) = train_log {
        write_accuracy_curve_svg(log, &dir.join("accuracy_curve.svg"))?;
    }
    Ok(())
}

/// Row-normalized grayscale heatmap (dark = high fraction).
fn write_confusion_svg(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let t = report.class_names.len();
    let cell = 16usize;
    let margin = 80usize;
    let size = margin + t * cell + 10;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    )?;
    for (i, row) in report.confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let frac = if support == 0 { 0.0 } else { v as f64 / support as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            writeln!(
                f,
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                margin + j * cell,
                margin + i * cell
            )?;
        }
        writeln!(
            f,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            margin - 4,
            margin + i * cell + cell / 2 + 3,
            xml_escape(&report.class_names[i])
        )?;
    }
    for (j, name) in report.class_names.iter().enumerate() {
        writeln!(
            f,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" transform=\"rotate(-60 {} {})\">{}</text>",
            margin + j * cell + cell / 2,
            margin - 6,
            margin + j * cell + cell / 2,
            margin - 6,
            xml_escape(name)
        )?;
    }
    writeln!(f, "</svg>")?;
    Ok(())
}

/// Validation-accuracy curve from the JSON-lines training metrics log.
fn write_accuracy_curve_svg(log: &Path, path: &Path) -> Result<(), EvalError> {
    #[derive(Deserialize)]
    struct Entry {
        step: u64,
        #[serde(default)]
        val_acc: Option<f64>,
    }
    let mut points: Vec<(u64, f64)> = Vec::new();
    for line in std::fs::read_to_string(log)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Entry =
            serde_json::from_str(line).map_err(|e| EvalError::FormatError(format!("metrics log: {e}")))?;
        if let Some(acc) = e.val_acc {
            points.push((e.step, acc));
        }
    }
    let (w, h, margin) = (480usize, 320usize, 40usize);
    let max_step = points.last().map_or(1, |p| p.0.max(1));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )?;
    writeln!(
        f,
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2 * margin,
        h - 2 * margin
    )?;
    if !points.is_empty() {
        let coords: Vec<String> = points
            .iter()
            .map(|&(s, acc)| {
                let x = margin as f64 + (w - 2 * margin) as f64 * s as f64 / max_step as f64;
                let y = (h - margin) as f64 - (h - 2 * margin) as f64 * acc;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        writeln!(
            f,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
            coords.join(" ")
        )?;
    }
    writeln!(
        f,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">step</text>",
        w / 2,
        h - 8
    )?;
    writeln!(
        f,
        "<text x=\"12\" y=\"{}\" font-size=\"11\" transform=\"rotate(-90 12 {})\">validation accuracy</text>",
        h / 2,
        h / 2
    )?;
    writeln!(f, "</svg>")?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sector, Split};

    fn dataset(names: &[&str], counts: &[usize]) -> SectorDataset {
        let mut records = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                records.push(Sector {
                    bytes: vec![label as u8; 8],
                    label: label as u16,
                });
            }
        }
        SectorDataset::new(
            8,
            names.iter().map(|s| s.to_string()).collect(),
            records,
            Split::Test,
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let ds = dataset(&["a", "b"], &[3, 2]);
        let report = build_report(&ds, vec![vec![3, 0], vec![0, 2]]);
        assert_eq!(report.overall_accuracy, 1.0);
        assert_eq!(report.per_class_accuracy, vec![Some(1.0), Some(1.0)]);
        assert_eq!(report.sample_count, 5);
    }

    #[test]
    fn constant_predictor_on_balanced_set_scores_one_over_t() {
        let ds = dataset(&["a", "b", "c", "d"], &[5, 5, 5, 5]);
        let mut conf = vec![vec![0usize; 4]; 4];
        for row in conf.iter_mut() {
            row[0] = 5; // everything predicted as class 0
        }
        let report = build_report(&ds, conf);
        assert!((report.overall_accuracy - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_is_null_and_excluded_from_macro() {
        let ds = dataset(&["a", "b", "c"], &[4, 0, 4]);
        let report = build_report(&ds, vec![vec![4, 0, 0], vec![0, 0, 0], vec![2, 0, 2]]);
        assert_eq!(report.per_class_accuracy[1], None);
        assert!((report.macro_accuracy - (1.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn grouped_confusion_sums_member_cells() {
        let mut ds = dataset(&["jpg", "png", "txt"], &[2, 2, 2]);
        let mut tags = BTreeMap::new();
        tags.insert("jpg".to_string(), "image".to_string());
        tags.insert("png".to_string(), "image".to_string());
        tags.insert("txt".to_string(), "text".to_string());
        ds.group_tags = Some(tags);
        let conf = vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]];
        let report = build_report(&ds, conf);
        let g = report.grouped.unwrap();
        assert_eq!(g.group_names, vec!["image", "text"]);
        // image row: (1+1)+(0+2)=4 into image, 0 into text
        assert_eq!(g.confusion, vec![vec![4, 0], vec![1, 1]]);
    }

    #[test]
    fn row_sums_equal_support_and_trace_identity_holds() {
        let ds = dataset(&["a", "b"], &[3, 4]);
        let conf = vec![vec![2, 1], vec![1, 3]];
        let report = build_report(&ds, conf.clone());
        for (row, &support) in conf.iter().zip(&[3usize, 4]) {
            assert_eq!(row.iter().sum::<usize>(), support);
        }
        let trace: usize = (0..2).map(|i| conf[i][i]).sum();
        assert!((report.overall_accuracy - trace as f64 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn compare_reports_zero_for_identical() {
        let ds = dataset(&["a", "b"], &[2, 2]);
        let r = build_report(&ds, vec![vec![2, 0], vec![1, 1]]);
        let delta = compare_reports(&r, &r).unwrap();
        assert_eq!(delta.overall, 0.0);
        assert_eq!(delta.per_class, vec![Some(0.0), Some(0.0)]);
        let other = build_report(&dataset(&["x", "y"], &[2, 2]), vec![vec![2, 0], vec![1, 1]]);
        assert!(compare_reports(&r, &other).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.3, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.7, 0.7]), 0);
    }

    #[test]
    fn emitted_files_are_parseable() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(&["a", "b"], &[2, 2]);
        let report = build_report(&ds, vec![vec![2, 0], vec![0, 2]]);
        let log = dir.path().join("metrics.jsonl");
        std::fs::write(
            &log,
            "{\"step\":1,\"epoch\":0,\"lr\":1e-4,\"loss\":1.2}\n{\"step\":2,\"val_acc\":0.5}\n{\"step\":4,\"val_acc\":0.9}\n",
        )
        .unwrap();
        emit_report(&report, Some(&log), dir.path()).unwrap();

        let loaded: EvalReport =
            serde_json::from_slice(&std::fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(loaded, report);

        let csv = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), ",a,b");
        assert_eq!(lines.next().unwrap(), "a,2,0");
        assert_eq!(lines.next().unwrap(), "b,0,2");

        for svg in ["confusion.svg", "accuracy_curve.svg"] {
            let body = std::fs::read_to_string(dir.path().join(svg)).unwrap();
            assert!(body.starts_with("<svg"));
            assert!(body.trim_end().ends_with("</svg>"));
            // crude well-formedness: every rect/text/polyline is self-closed
            assert_eq!(body.matches("<svg").count(), body.matches("</svg>").count());
        }
    }
}
