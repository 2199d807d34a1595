//! Result tables (CSV) and AUC-vs-DP tradeoff charts (SVG).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{write_atomic, CellRecord};
use crate::trainer::Approach;

pub const CSV_HEADER: &str = "approach,dataset,eta,mean_auc,std_auc,mean_dp,std_dp,n_seeds,flag";

fn sorted(records: &[CellRecord]) -> Vec<&CellRecord> {
    let mut rows: Vec<&CellRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        a.approach
            .cmp(&b.approach)
            .then(a.eta.total_cmp(&b.eta))
    });
    rows
}

/// Renders the results table; metrics carry four decimals.
pub fn render_csv(records: &[CellRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Empty("no results to write".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted(records) {
        let metrics = match &r.result {
            Some(res) => format!(
                "{:.4},{:.4},{:.4},{:.4},{}",
                res.mean_auc,
                res.std_auc,
                res.mean_delta_dp,
                res.std_delta_dp,
                res.per_seed.len()
            ),
            None => format!(",,,,{}", r.seeds.len()),
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            r.approach.name(),
            r.dataset,
            r.eta,
            metrics,
            r.flag.as_str()
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn emit_csv(records: &[CellRecord], path: impl AsRef<Path>) -> Result<()> {
    let text = render_csv(records)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn approach_color(approach: Approach) -> &'static str {
    match approach {
        Approach::Vanilla => "#1f77b4",
        Approach::RelatedRemoved => "#ff7f0e",
        Approach::ShiftAdapted => "#9467bd",
        Approach::FairRelated => "#d62728",
        Approach::Hybrid => "#2ca02c",
    }
}

/// Reference point drawn as a horizontal AUC line and a vertical DP line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub auc: f64,
    pub delta_dp: f64,
}

impl Thresholds {
    /// Taken from the related-features-removed cell, if present.
    pub fn from_records(records: &[CellRecord]) -> Option<Self> {
        records
            .iter()
            .filter(|r| r.approach == Approach::RelatedRemoved)
            .find_map(|r| r.result.as_ref())
            .map(|res| Thresholds {
                auc: res.mean_auc,
                delta_dp: res.mean_delta_dp,
            })
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).max(0.02);
    let pad = span * 0.08;
    let lo = ((lo - pad) * 50.0).floor() / 50.0;
    let hi = ((hi + pad) * 50.0).ceil() / 50.0;
    (lo, hi)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 {
        out.push(t);
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of mean DP (x) against mean AUC (y), one colour per approach.
pub fn render_svg(records: &[CellRecord], thresholds: Option<Thresholds>, title: &str) -> Result<String> {
    let points: Vec<(Approach, f64, f64, f64)> = sorted(records)
        .into_iter()
        .filter_map(|r| {
            r.result
                .as_ref()
                .map(|res| (r.approach, r.eta, res.mean_delta_dp, res.mean_auc))
        })
        .collect();
    if points.is_empty() {
        return Err(Error::Empty("no completed results to plot".into()));
    }

    let mut xs: Vec<f64> = points.iter().map(|p| p.2).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.3).collect();
    if let Some(t) = thresholds {
        xs.push(t.delta_dp);
        ys.push(t.auc);
    }
    // DP axis always starts at perfect parity
    let (_, x_hi) = nice_range(0.0, xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let x_lo = 0.0;
    let (y_lo, y_hi) = nice_range(
        ys.iter().copied().fold(f64::INFINITY, f64::min),
        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        w,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );

    for t in ticks(x_lo, x_hi) {
        let x = sx(t);
        let _ = writeln!(
            w,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.2}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
    }
    for t in ticks(y_lo, y_hi) {
        let y = sy(t);
        let _ = writeln!(
            w,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t:.2}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Demographic parity distance (ΔDP)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">AUC</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    if let Some(t) = thresholds {
        let y = sy(t.auc);
        let x = sx(t.delta_dp);
        let _ = writeln!(
            w,
            r##"<line class="threshold" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ff7f0e" stroke-dasharray="6 4"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            w,
            r##"<line class="threshold" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ff7f0e" stroke-dasharray="6 4"/>"##,
            TOP + plot_h
        );
    }

    for &(approach, eta, dp, auc) in &points {
        let _ = writeln!(
            w,
            r#"<circle class="marker" data-approach="{}" cx="{:.2}" cy="{:.2}" r="5" fill="{}" fill-opacity="0.85"><title>{} eta={eta} AUC={auc:.4} DP={dp:.4}</title></circle>"#,
            approach.name(),
            sx(dp),
            sy(auc),
            approach_color(approach),
            approach.label()
        );
    }

    let mut present: Vec<Approach> = points.iter().map(|p| p.0).collect();
    present.dedup();
    let legend_x = LEFT + plot_w + 20.0;
    for (i, approach) in present.iter().enumerate() {
        let y = TOP + 10.0 + 22.0 * i as f64;
        let _ = writeln!(
            w,
            r#"<circle cx="{legend_x:.2}" cy="{y:.2}" r="5" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            approach_color(*approach),
            legend_x + 12.0,
            y + 4.0,
            escape(approach.label())
        );
    }
    if thresholds.is_some() {
        let y = TOP + 10.0 + 22.0 * present.len() as f64;
        let _ = writeln!(
            w,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ff7f0e" stroke-dasharray="6 4"/><text x="{:.2}" y="{:.2}">Related-removed threshold</text>"##,
            legend_x - 6.0,
            legend_x + 6.0,
            legend_x + 12.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(
    records: &[CellRecord],
    thresholds: Option<Thresholds>,
    title: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let svg = render_svg(records, thresholds, title)?;
    write_atomic(path.as_ref(), svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::CellFlag;
    use crate::metrics::{aggregate, SeedMetrics};
    use crate::trainer::TrainConfig;

    fn record(approach: Approach, eta: f64, auc: f64, dp: f64) -> CellRecord {
        CellRecord {
            dataset: "adult".into(),
            approach,
            eta,
            seeds: vec![0],
            flag: CellFlag::None,
            error: None,
            result: Some(
                aggregate(
                    approach.name(),
                    eta,
                    vec![SeedMetrics {
                        seed: 0,
                        auc,
                        delta_dp: dp,
                    }],
                )
                .unwrap(),
            ),
            traces: vec![],
            train: TrainConfig::default(),
        }
    }

    #[test]
    fn csv_rounding_and_order() {
        let rows = vec![
            record(Approach::ShiftAdapted, 0.0, 0.8667, 0.2476),
            record(Approach::Vanilla, 0.0, 0.85649, 0.2978),
            record(Approach::RelatedRemoved, 0.0, 0.7827, 0.0995),
        ];
        let csv = render_csv(&rows).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("vanilla,adult,0,0.8565,0.0000,0.2978,"));
        assert!(lines[2].starts_with("related_removed"));
        assert!(lines[3].starts_with("shift_adapted"));
        assert!(render_csv(&[]).is_err());
    }

    #[test]
    fn csv_failed_row() {
        let mut r = record(Approach::Hybrid, 0.1, 0.5, 0.0);
        r.result = None;
        r.flag = CellFlag::Failed;
        let csv = render_csv(&[r]).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "hybrid,adult,0.1,,,,,1,failed");
    }

    #[test]
    fn svg_markers_and_thresholds() {
        let rows: Vec<CellRecord> = (0..6)
            .map(|i| record(Approach::Hybrid, 10f64.powi(i - 5), 0.78, 0.065 + 0.03 * i as f64))
            .collect();
        let t = Thresholds {
            auc: 0.80,
            delta_dp: 0.06,
        };
        let svg = render_svg(&rows, Some(t), "MEPS hybrid").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches(r#"class="marker""#).count(), 6);
        assert_eq!(svg.matches("#2ca02c\" fill-opacity").count(), 6);
        assert_eq!(svg.matches(r#"class="threshold""#).count(), 2);

        let one = render_svg(&rows[..1], None, "single").unwrap();
        assert_eq!(one.matches(r#"class="marker""#).count(), 1);
        assert_eq!(one.matches(r#"class="threshold""#).count(), 0);
        assert!(render_svg(&[], None, "x").is_err());
    }
}
