use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bayes::ObservationLog;
use crate::data::{load_results, ResultTable};
use crate::error::Result;

use super::write_text;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Draw markers only.
    pub scatter: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            dashed: false,
            scatter: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Renders `chart` as a standalone SVG document. Non-finite points and, on a log axis,
/// nonpositive abscissae are skipped.
pub fn line_chart(chart: &Chart) -> String {
    let tx = |x: f64| if chart.log_x { x.log10() } else { x };
    let pts: Vec<Vec<(f64, f64)>> = chart
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!chart.log_x || *x > 0.0))
                .map(|&(x, y)| (tx(x), y))
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = pts.iter().flatten().copied().collect();
    let (mut x0, mut x1, mut y0, mut y1) = all.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        esc(&chart.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
    );
    let ticks = 5;
    for k in 0..=ticks {
        let f = k as f64 / ticks as f64;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#ccc"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            MARGIN_T,
            MARGIN_T + ph,
            MARGIN_T + ph + 16.0,
            tick_label(xv, chart.log_x)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ccc"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            py + 4.0,
            tick_label(yv, false)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        esc(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        MARGIN_T + ph / 2.0,
        esc(&chart.y_label)
    );
    for (k, (series, p)) in chart.series.iter().zip(&pts).enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !series.scatter && p.len() > 1 {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            let dash = if series.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in p {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn col(t: &ResultTable, name: &str) -> Vec<f64> {
    t.column(name).unwrap_or_default()
}

fn xy(x: &[f64], y: &[f64], keep: impl Fn(usize) -> bool) -> Vec<(f64, f64)> {
    x.iter()
        .zip(y)
        .enumerate()
        .filter(|(k, _)| keep(*k))
        .map(|(_, (&a, &b))| (a, b))
        .collect()
}

/// Writes SVG plots for whichever result tables `dir` holds: `radius_sweep.csv`,
/// `player_sweep.csv`, `grid_search.csv` and `tuner.csv`. Returns the files written.
pub fn render_report(dir: impl AsRef<Path>, eps_joint: f64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut charts: Vec<(&str, Chart)> = Vec::new();
    let target = |xs: &[f64]| -> Series {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Series {
            dashed: true,
            ..Series::line("target", vec![(lo, eps_joint), (hi, eps_joint)])
        }
    };

    let p = dir.join("radius_sweep.csv");
    if p.exists() {
        let t = load_results(&p)?;
        let (nu, reg) = (col(&t, "radius"), col(&t, "regulated"));
        let regulated = |k: usize| reg[k] == 1.0;
        let bench_under: Vec<f64> = (0..nu.len())
            .filter(|&k| !regulated(k))
            .map(|k| col(&t, "q80_under")[k])
            .collect();
        let reg_nu: Vec<f64> = (0..nu.len()).filter(|&k| regulated(k)).map(|k| nu[k]).collect();
        charts.push((
            "radius_rates.svg",
            Chart {
                title: "Joint violation rate against radius".into(),
                x_label: "radius".into(),
                y_label: "out-of-sample joint rate".into(),
                log_x: true,
                series: vec![
                    Series::line("regulated", xy(&nu, &col(&t, "eps_e"), regulated)),
                    target(&reg_nu),
                ],
            },
        ));
        let mut series = vec![
            Series::line("20% quantile", xy(&nu, &col(&t, "q20_under"), regulated)),
            Series::line("80% quantile", xy(&nu, &col(&t, "q80_under"), regulated)),
            Series::line("mean shortfall", xy(&nu, &col(&t, "mean_shortfall"), regulated)),
        ];
        if let (Some(&b), Some(lo), Some(hi)) = (bench_under.first(), reg_nu.first(), reg_nu.last()) {
            series.push(Series {
                dashed: true,
                ..Series::line("unregulated 80%", vec![(*lo, b), (*hi, b)])
            });
        }
        charts.push((
            "radius_under.svg",
            Chart {
                title: "Undelivered reserve against radius".into(),
                x_label: "radius".into(),
                y_label: "MWh per test".into(),
                log_x: true,
                series,
            },
        ));
    }

    let p = dir.join("player_sweep.csv");
    if p.exists() {
        let t = load_results(&p)?;
        let rows: Vec<super::PlayerSweepRow> = (0..t.rows.len())
            .map(|k| super::PlayerSweepRow {
                players: t.rows[k][0] as usize,
                seed: t.rows[k][1] as u64,
                eps_ind: t.rows[k][2],
                eps_e: t.rows[k][3],
                h: t.rows[k][4],
                solves: t.rows[k][5] as usize,
                stopped_early: t.rows[k][6] == 1.0,
            })
            .collect();
        let summary = super::player_sweep_summary(&rows);
        let xs: Vec<f64> = summary.iter().map(|s| s.0 as f64).collect();
        charts.push((
            "player_sweep.svg",
            Chart {
                title: "Tuned rates against player count".into(),
                x_label: "microgrid players".into(),
                y_label: "rate".into(),
                log_x: false,
                series: vec![
                    Series::line(
                        "individual (tuned)",
                        summary.iter().map(|s| (s.0 as f64, s.1)).collect(),
                    ),
                    Series::line(
                        "joint (out of sample)",
                        summary.iter().map(|s| (s.0 as f64, s.2)).collect(),
                    ),
                    target(&xs),
                ],
            },
        ));
    }

    let tuner_path = dir.join("tuner.csv");
    let tuner = if tuner_path.exists() {
        Some(ObservationLog::read_csv(&tuner_path, eps_joint)?)
    } else {
        None
    };
    if let Some(log) = &tuner {
        let trace: Vec<(f64, f64)> = log
            .best_trace()
            .iter()
            .enumerate()
            .map(|(k, &h)| ((k + 1) as f64, h))
            .collect();
        let each: Vec<(f64, f64)> = log
            .rows
            .iter()
            .enumerate()
            .map(|(k, r)| ((k + 1) as f64, r.h))
            .collect();
        charts.push((
            "tuner.svg",
            Chart {
                title: "Tuning convergence".into(),
                x_label: "evaluation".into(),
                y_label: "|joint rate - target|".into(),
                log_x: false,
                series: vec![
                    Series::line("best so far", trace),
                    Series {
                        scatter: true,
                        ..Series::line("evaluated", each)
                    },
                ],
            },
        ));
    }

    let p = dir.join("grid_search.csv");
    if p.exists() {
        let t = load_results(&p)?;
        let e = col(&t, "eps_ind");
        let mut series = vec![Series::line("grid", xy(&e, &col(&t, "h"), |_| true))];
        if let Some(log) = &tuner {
            if log.rows.iter().all(|r| r.eps.len() == 1) {
                series.push(Series {
                    scatter: true,
                    ..Series::line("bayesian", log.rows.iter().map(|r| (r.eps[0], r.h)).collect())
                });
            }
        }
        charts.push((
            "grid_search.svg",
            Chart {
                title: "Grid search against Bayesian evaluations".into(),
                x_label: "individual rate".into(),
                y_label: "|joint rate - target|".into(),
                log_x: false,
                series,
            },
        ));
    }

    let mut out = Vec::new();
    for (name, chart) in charts {
        let p = dir.join(name);
        write_text(&p, &line_chart(&chart))?;
        out.push(p);
    }
    Ok(out)
}
