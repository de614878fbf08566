use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::table::{fmt_float, write_csv, Table};
use super::ExperimentError;
use crate::augment::Condition;
use crate::metrics::{summarize, HeadMetrics};

pub const HEAD_METRICS_COLUMNS: [&str; 9] = [
    "dataset",
    "condition",
    "layer",
    "head",
    "mad_mean",
    "mad_std",
    "entropy_mean",
    "entropy_std",
    "n_images",
];

pub const ABLATION_COLUMNS: [&str; 6] = ["condition", "test_acc", "mad_min", "mad_max", "entropy_min", "entropy_max"];

/// One head of one (dataset, condition) run.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRow {
    pub dataset: String,
    pub condition: String,
    pub metrics: HeadMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub condition: String,
    pub test_acc: f64,
    pub mad_min: f64,
    pub mad_max: f64,
    pub entropy_min: f64,
    pub entropy_max: f64,
}

pub(crate) fn write_head_metrics(path: &Path, rows: &[HeadRow]) -> Result<(), ExperimentError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.dataset.clone(),
                r.condition.clone(),
                m.layer.to_string(),
                m.head.to_string(),
                fmt_float(m.mad_mean),
                fmt_float(m.mad_std),
                fmt_float(m.entropy_mean),
                fmt_float(m.entropy_std),
                m.n_images.to_string(),
            ]
        })
        .collect();
    write_csv(path, &HEAD_METRICS_COLUMNS, &body)
}

pub fn read_head_metrics(path: &Path) -> Result<Vec<HeadRow>, ExperimentError> {
    let t = Table::read(path, &HEAD_METRICS_COLUMNS)?;
    (0..t.rows.len())
        .map(|i| {
            Ok(HeadRow {
                dataset: t.str(i, "dataset"),
                condition: t.str(i, "condition"),
                metrics: HeadMetrics {
                    layer: t.parse(i, "layer")?,
                    head: t.parse(i, "head")?,
                    mad_mean: t.parse(i, "mad_mean")?,
                    mad_std: t.parse(i, "mad_std")?,
                    entropy_mean: t.parse(i, "entropy_mean")?,
                    entropy_std: t.parse(i, "entropy_std")?,
                    n_images: t.parse(i, "n_images")?,
                },
            })
        })
        .collect()
}

pub(crate) fn write_ablation_summary(path: &Path, rows: &[AblationRow]) -> Result<(), ExperimentError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.condition.clone(),
                fmt_float(r.test_acc),
                fmt_float(r.mad_min),
                fmt_float(r.mad_max),
                fmt_float(r.entropy_min),
                fmt_float(r.entropy_max),
            ]
        })
        .collect();
    write_csv(path, &ABLATION_COLUMNS, &body)
}

pub fn read_ablation_summary(path: &Path) -> Result<Vec<AblationRow>, ExperimentError> {
    let t = Table::read(path, &ABLATION_COLUMNS)?;
    (0..t.rows.len())
        .map(|i| {
            Ok(AblationRow {
                condition: t.str(i, "condition"),
                test_acc: t.parse(i, "test_acc")?,
                mad_min: t.parse(i, "mad_min")?,
                mad_max: t.parse(i, "mad_max")?,
                entropy_min: t.parse(i, "entropy_min")?,
                entropy_max: t.parse(i, "entropy_max")?,
            })
        })
        .collect()
}

/// Paths of the figure-data files written by [`write_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub rank_profiles: PathBuf,
    pub scatter: PathBuf,
    pub heatmap_mad: PathBuf,
    pub heatmap_entropy: PathBuf,
    pub dotchart: PathBuf,
}

/// Groups rows by (dataset, condition) in first-seen order.
fn group(rows: &[HeadRow]) -> Vec<((String, String), Vec<HeadMetrics>)> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut map: BTreeMap<(String, String), Vec<HeadMetrics>> = BTreeMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.condition.clone());
        if !map.contains_key(&key) {
            order.push(key.clone());
        }
        map.entry(key).or_default().push(r.metrics.clone());
    }
    order
        .into_iter()
        .map(|k| {
            let v = map.remove(&k).expect("key recorded");
            (k, v)
        })
        .collect()
}

/// Writes rank profiles, the MAD/entropy scatter, per-layer×head heatmaps
/// and the min-MAD dot chart for every (dataset, condition) in `rows`.
pub fn write_report(rows: &[HeadRow], out_dir: &Path) -> Result<ReportFiles, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::Run(format!("{}: {e}", out_dir.display())))?;
    let groups = group(rows);
    if groups.is_empty() {
        return Err(ExperimentError::Analysis("no head metrics to report".into()));
    }
    let mut rank = Vec::new();
    let mut scatter = Vec::new();
    let mut heat_mad = Vec::new();
    let mut heat_ent = Vec::new();
    let mut dots = Vec::new();
    let mut max_heads = 0;
    for ((dataset, condition), metrics) in &groups {
        let s = summarize(metrics).map_err(|e| ExperimentError::Analysis(format!("{dataset}/{condition}: {e}")))?;
        max_heads = max_heads.max(s.heads);
        for (l, profile) in s.rank_profiles.iter().enumerate() {
            for (r, &v) in profile.iter().enumerate() {
                rank.push(vec![dataset.clone(), condition.clone(), (l + 1).to_string(), (r + 1).to_string(), fmt_float(v)]);
            }
        }
        let mut sorted = metrics.clone();
        sorted.sort_by_key(|m| (m.layer, m.head));
        for m in &sorted {
            scatter.push(vec![
                condition.clone(),
                m.layer.to_string(),
                m.head.to_string(),
                fmt_float(m.mad_mean),
                fmt_float(m.entropy_mean),
            ]);
        }
        for (grid, out) in [(&s.heatmap_mad, &mut heat_mad), (&s.heatmap_entropy, &mut heat_ent)] {
            for (l, row) in grid.iter().enumerate() {
                let mut rec = vec![dataset.clone(), condition.clone(), (l + 1).to_string()];
                rec.extend(row.iter().map(|&v| fmt_float(v)));
                out.push(rec);
            }
        }
        let has_cutmix = Condition::from_name(condition).map(Condition::has_cutmix).unwrap_or(false);
        dots.push((s.mad_min, condition.clone(), has_cutmix));
    }
    // stable: ties keep input order
    dots.sort_by(|a, b| a.0.total_cmp(&b.0));

    let files = ReportFiles {
        rank_profiles: out_dir.join("rank_profiles.csv"),
        scatter: out_dir.join("scatter.csv"),
        heatmap_mad: out_dir.join("heatmap_mad.csv"),
        heatmap_entropy: out_dir.join("heatmap_entropy.csv"),
        dotchart: out_dir.join("ablation_dotchart.csv"),
    };
    write_csv(&files.rank_profiles, &["dataset", "condition", "layer", "rank", "mad"], &rank)?;
    write_csv(&files.scatter, &["condition", "layer", "head", "mad", "entropy"], &scatter)?;
    let head_cols: Vec<String> = (1..=max_heads).map(|h| format!("head_{h}")).collect();
    let mut heat_header = vec!["dataset", "condition", "layer"];
    heat_header.extend(head_cols.iter().map(String::as_str));
    write_csv(&files.heatmap_mad, &heat_header, &heat_mad)?;
    write_csv(&files.heatmap_entropy, &heat_header, &heat_ent)?;
    let dot_rows: Vec<Vec<String>> = dots
        .into_iter()
        .map(|(v, c, cm)| vec![c, fmt_float(v), cm.to_string()])
        .collect();
    write_csv(&files.dotchart, &["condition", "min_mad", "has_cutmix"], &dot_rows)?;
    Ok(files)
}
