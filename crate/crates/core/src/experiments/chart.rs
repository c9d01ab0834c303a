//! Minimal SVG line charts. Output is a pure function of the input, so a
//! fixed result always renders to the same bytes.

use std::fmt::Write as _;

use super::summary::summarize;
use super::{Schedule, SweepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    /// Mean validation accuracy per epoch, one line per latent length.
    Epochs,
    /// Mean best accuracy against `L / N`.
    Ratio,
    /// Per-epoch mean with a standard-error band.
    Band,
}

impl ChartKind {
    pub const ALL: [ChartKind; 3] = [ChartKind::Epochs, ChartKind::Ratio, ChartKind::Band];

    pub fn file_name(self) -> &'static str {
        match self {
            ChartKind::Epochs => "accuracy_by_epoch.svg",
            ChartKind::Ratio => "accuracy_by_ratio.svg",
            ChartKind::Band => "accuracy_band.svg",
        }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    /// Lower and upper bound per point.
    band: Option<Vec<(f64, f64)>>,
}

fn label(schedule: Schedule, latent_len: usize, schedules: usize) -> String {
    if schedules > 1 {
        format!("L={latent_len} {schedule}")
    } else {
        format!("L={latent_len}")
    }
}

fn series_for(result: &SweepResult, kind: ChartKind) -> Result<(Vec<Series>, &'static str, &'static str)> {
    let summary = summarize(result)?;
    let mut schedules: Vec<Schedule> = summary.groups.iter().map(|g| g.schedule).collect();
    schedules.dedup();
    let n_sched = schedules.len();
    let mut out = Vec::new();
    match kind {
        ChartKind::Epochs | ChartKind::Band => {
            for g in &summary.groups {
                let pts: Vec<_> = summary
                    .bands
                    .iter()
                    .filter(|b| b.schedule == g.schedule && b.latent_len == g.latent_len && b.input_len == g.input_len)
                    .collect();
                if pts.is_empty() {
                    continue;
                }
                out.push(Series {
                    label: label(g.schedule, g.latent_len, n_sched),
                    points: pts.iter().map(|b| (b.epoch as f64, b.mean)).collect(),
                    band: (kind == ChartKind::Band)
                        .then(|| pts.iter().map(|b| (b.mean - b.se, b.mean + b.se)).collect()),
                });
            }
        }
        ChartKind::Ratio => {
            for s in schedules {
                let mut pts: Vec<(f64, f64)> = summary
                    .groups
                    .iter()
                    .filter(|g| g.schedule == s)
                    .map(|g| (g.latent_len as f64 / g.input_len as f64, g.mean))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                out.push(Series {
                    label: if n_sched > 1 { s.to_string() } else { "mean best".into() },
                    points: pts,
                    band: None,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::usage("no epoch records to chart"));
    }
    let (xl, title) = match kind {
        ChartKind::Epochs => ("epoch", "Validation accuracy by epoch"),
        ChartKind::Ratio => ("latent / input length", "Best accuracy by reduction ratio"),
        ChartKind::Band => ("epoch", "Mean accuracy with standard error"),
    };
    Ok((out, xl, title))
}

fn tick(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders one chart of `result` as an SVG document.
pub fn render_charts(result: &SweepResult, kind: ChartKind) -> Result<String> {
    let (series, x_label, title) = series_for(result, kind)?;
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if kind == ChartKind::Ratio {
        x0 = 0.0;
        x1 = x1.max(1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{title}</text>"#, LEFT + pw / 2.0);

    for i in 0..=4 {
        let y = i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{4}</text>"##,
            sy(y),
            LEFT + pw,
            LEFT - 6.0,
            sy(y) + 4.0,
            tick(y)
        );
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            TOP + ph + 18.0,
            tick(x)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">token accuracy</text>"#,
        TOP + ph / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            if s.points.len() > 1 {
                let upper = s.points.iter().zip(band).map(|(p, b)| format!("{:.2},{:.2}", sx(p.0), sy(b.1)));
                let lower = s.points.iter().zip(band).rev().map(|(p, b)| format!("{:.2},{:.2}", sx(p.0), sy(b.0)));
                let pts: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" ")
                );
            }
        }
        if s.points.len() > 1 {
            let pts: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        if s.points.len() == 1 || kind == ChartKind::Ratio {
            for p in &s.points {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                    sx(p.0),
                    sy(p.1)
                );
            }
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 2.0,
            lx + 20.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::super::SweepRow;
    use super::*;
    use crate::train::EpochRecord;

    fn row(latent_len: usize, seed: u64, accs: &[f64]) -> SweepRow {
        SweepRow {
            input_len: 8,
            latent_len,
            seed,
            schedule: Schedule::WarmDown,
            best_accuracy: accs.iter().copied().fold(0.0, f64::max),
            final_accuracy: *accs.last().unwrap_or(&0.0),
            best_epoch: 0,
            epochs_run: accs.len(),
            trail: accs
                .iter()
                .enumerate()
                .map(|(epoch, &a)| EpochRecord {
                    epoch,
                    lr: 0.001,
                    train_loss: 1.0,
                    val_accuracy: a,
                    seconds: 0.1 * epoch as f64,
                })
                .collect(),
        }
    }

    fn fixture() -> SweepResult {
        SweepResult {
            rows: vec![
                row(8, 1, &[0.5, 0.9, 1.0]),
                row(8, 2, &[0.4, 0.8, 0.95]),
                row(4, 1, &[0.3, 0.5]),
                row(4, 2, &[0.35, 0.55]),
            ],
        }
    }

    #[test]
    fn empty_result_is_usage_error() {
        for kind in ChartKind::ALL {
            assert!(matches!(render_charts(&SweepResult::default(), kind), Err(Error::Usage(_))));
        }
    }

    #[test]
    fn one_point_series_is_a_mark() {
        let svg = render_charts(&SweepResult { rows: vec![row(4, 1, &[0.7])] }, ChartKind::Epochs).unwrap();
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn rendering_is_deterministic() {
        for kind in ChartKind::ALL {
            let a = render_charts(&fixture(), kind).unwrap();
            let b = render_charts(&fixture(), kind).unwrap();
            assert_eq!(a, b);
            assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        }
    }

    #[test]
    fn chart_kinds_draw_their_elements() {
        let epochs = render_charts(&fixture(), ChartKind::Epochs).unwrap();
        assert_eq!(epochs.matches("<polyline").count(), 2);
        assert!(epochs.contains("L=8") && epochs.contains("L=4"));
        let band = render_charts(&fixture(), ChartKind::Band).unwrap();
        assert_eq!(band.matches("<polygon").count(), 2);
        let ratio = render_charts(&fixture(), ChartKind::Ratio).unwrap();
        assert_eq!(ratio.matches("<circle").count(), 2);
    }
}
