//! Cross-run comparison table and frequency-series plots.

use serde::{Deserialize, Serialize};

use crate::metrics::{summarize, MetricsError, RunMetrics, SeriesRow};
use crate::model::ModelKind;

/// Test RMSE of one completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub kind: ModelKind,
    pub seed: u64,
    pub test_rmse: f64,
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: ModelKind,
    pub seeds: Vec<u64>,
    pub mean: f64,
    /// Absent when only one seed is available.
    pub std: Option<f64>,
    pub metrics: Option<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Kind with the lowest mean RMSE.
    pub best: Option<ModelKind>,
    pub notes: Vec<String>,
}

/// Groups scores by model kind in the order SMI-image, SMI-BFM, MMI.
pub fn build_report(scores: &[RunScore]) -> Result<Report, MetricsError> {
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for kind in [ModelKind::SmiImage, ModelKind::SmiBfm, ModelKind::Mmi] {
        let runs: Vec<&RunScore> = scores.iter().filter(|s| s.kind == kind).collect();
        let Some(first) = runs.first() else { continue };
        let per_seed: Vec<(u64, f64)> = runs.iter().map(|r| (r.seed, r.test_rmse)).collect();
        let seeds = per_seed.iter().map(|(s, _)| *s).collect();
        if per_seed.len() == 1 {
            notes.push(format!("{kind}: single seed, standard deviation omitted"));
            rows.push(ReportRow {
                kind,
                seeds,
                mean: first.test_rmse,
                std: None,
                metrics: None,
            });
        } else {
            let m = summarize(kind, &per_seed, first.test_samples)?;
            rows.push(ReportRow {
                kind,
                seeds,
                mean: m.mean,
                std: Some(m.std),
                metrics: Some(m),
            });
        }
    }
    let best = rows.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)).map(|r| r.kind);
    Ok(Report { rows, best, notes })
}

/// Plain-text table of mean ± std test RMSE per model kind.
pub fn render_table(report: &Report) -> String {
    let mut out = String::from("Recomposition errors (test RMSE, normalized amplitude)\n");
    out.push_str(&format!("{:<10} {:>5}  {}\n", "model", "seeds", "RMSE"));
    for row in &report.rows {
        let value = match row.std {
            Some(std) => format!("{:.4} ± {:.4}", row.mean, std),
            None => format!("{:.4}", row.mean),
        };
        let mark = if report.best == Some(row.kind) {
            "  <- lowest"
        } else {
            ""
        };
        out.push_str(&format!(
            "{:<10} {:>5}  {value}{mark}\n",
            row.kind.to_string(),
            row.seeds.len()
        ));
    }
    for note in &report.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

/// Line plot of ground truth and prediction against subcarrier index.
pub fn render_series_svg(rows: &[SeriesRow], title: &str) -> String {
    let (width, height) = (640.0, 360.0);
    let (left, right, top, bottom) = (56.0, 16.0, 36.0, 44.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let k_max = rows.iter().map(|r| r.k).max().unwrap_or(1).max(1) as f64;
    let (mut lo, mut hi) = rows
        .iter()
        .flat_map(|r| [r.truth as f64, r.pred as f64])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    hi = hi.max(1.0);
    let x = |k: usize| left + plot_w * k as f64 / k_max;
    let y = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));
    let polyline = |values: &mut dyn Iterator<Item = (usize, f64)>| {
        values
            .map(|(k, v)| format!("{:.2},{:.2}", x(k), y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let truth = polyline(&mut rows.iter().map(|r| (r.k, r.truth as f64)));
    let pred = polyline(&mut rows.iter().map(|r| (r.k, r.pred as f64)));

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#444\"/>\n"
    ));
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>\n",
            left - 6.0,
            y(v) + 3.0
        ));
    }
    for i in 0..=4 {
        let k = (k_max * i as f64 / 4.0).round() as usize;
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{k}</text>\n",
            x(k),
            top + plot_h + 14.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">subcarrier</text>\n",
        left + plot_w / 2.0,
        height - 8.0
    ));
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{truth}\"/>\n"
    ));
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\" points=\"{pred}\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">truth</text>\n",
        left + 8.0,
        top + 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#d62728\">prediction</text>\n",
        left + 48.0,
        top + 14.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(kind: ModelKind, seed: u64, v: f64) -> RunScore {
        RunScore {
            kind,
            seed,
            test_rmse: v,
            test_samples: 200,
        }
    }

    #[test]
    fn three_kinds_three_rows() {
        let mut scores = Vec::new();
        for (kind, base) in [
            (ModelKind::Mmi, 0.10),
            (ModelKind::SmiBfm, 0.11),
            (ModelKind::SmiImage, 0.14),
        ] {
            for seed in 1..=5 {
                scores.push(score(kind, seed, base + seed as f64 * 1e-3));
            }
        }
        let report = build_report(&scores).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.best, Some(ModelKind::Mmi));
        let table = render_table(&report);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("± "));
    }

    #[test]
    fn single_seed_omits_std() {
        let report = build_report(&[score(ModelKind::SmiBfm, 1, 0.2)]).unwrap();
        assert_eq!(report.rows[0].std, None);
        assert_eq!(report.notes.len(), 1);
        assert!(!render_table(&report).contains('±'));
    }

    #[test]
    fn svg_has_both_series() {
        let rows: Vec<SeriesRow> = (0..8)
            .map(|k| SeriesRow {
                k,
                truth: k as f32 / 8.0,
                pred: 0.5,
            })
            .collect();
        let svg = render_series_svg(&rows, "element (1, 1)");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
