//! Report emission: metrics.csv, the per-user summary table, and
//! hand-written SVG line charts (no plotting dependency).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::dataset::UserId;
use crate::error::{Error, Result};
use crate::federation::RoundMetrics;

/// One `metrics.csv` data row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub user: UserId,
    pub local_acc: f64,
    pub global_acc: f64,
}

pub fn metrics_rows(rounds: &[RoundMetrics]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for round in rounds {
        for u in &round.per_user {
            rows.push(MetricsRow {
                iteration: round.iteration,
                user: u.user,
                local_acc: u.local_accuracy,
                global_acc: u.global_accuracy,
            });
        }
    }
    rows
}

fn render_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,user,local_acc,global_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.iteration, r.user, r.local_acc, r.global_acc
        );
    }
    out
}

pub fn write_metrics_csv(rounds: &[RoundMetrics], path: &Path) -> Result<()> {
    fs::write(path, render_metrics_csv(&metrics_rows(rounds)))?;
    Ok(())
}

pub fn load_metrics_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("iteration,user,local_acc,global_acc") => {}
        other => {
            return Err(Error::Schema(format!(
                "unexpected metrics header {other:?} in {}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Schema(format!("metrics row {} has {} fields", i + 2, fields.len())));
        }
        let parse_err =
            |what: &str| Error::Schema(format!("bad {what} in metrics row {}", i + 2));
        rows.push(MetricsRow {
            iteration: fields[0].parse().map_err(|_| parse_err("iteration"))?,
            user: fields[1].parse().map_err(|_| parse_err("user"))?,
            local_acc: fields[2].parse().map_err(|_| parse_err("local_acc"))?,
            global_acc: fields[3].parse().map_err(|_| parse_err("global_acc"))?,
        });
    }
    Ok(rows)
}

struct UserSeries {
    user: UserId,
    iterations: Vec<usize>,
    local: Vec<f64>,
    global: Vec<f64>,
}

fn split_by_user(rows: &[MetricsRow]) -> Vec<UserSeries> {
    let mut users: Vec<UserId> = rows.iter().map(|r| r.user).collect();
    users.sort_unstable();
    users.dedup();
    users
        .into_iter()
        .map(|user| {
            let mut mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.user == user).collect();
            mine.sort_by_key(|r| r.iteration);
            UserSeries {
                user,
                iterations: mine.iter().map(|r| r.iteration).collect(),
                local: mine.iter().map(|r| r.local_acc).collect(),
                global: mine.iter().map(|r| r.global_acc).collect(),
            }
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn render_summary_csv(rows: &[MetricsRow]) -> String {
    let series = split_by_user(rows);
    let mut out = String::from("user,local_update,global_update,accuracy_increase\n");
    let mut local_means = Vec::new();
    let mut global_means = Vec::new();
    for s in &series {
        let l = mean(&s.local) * 100.0;
        let g = mean(&s.global) * 100.0;
        let _ = writeln!(out, "User_{},{:.2},{:.2},{:.2}", s.user, l, g, g - l);
        local_means.push(l);
        global_means.push(g);
    }
    let l = mean(&local_means);
    let g = mean(&global_means);
    let _ = writeln!(out, "Average,{:.2},{:.2},{:.2}", l, g, g - l);
    out
}

pub fn write_summary_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    fs::write(path, render_summary_csv(rows))?;
    Ok(())
}

// ---- svg charts ----

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    values: &'a [f64],
}

/// Accuracy-per-iteration line chart; y axis fixed to 0..100%.
fn svg_line_chart(title: &str, iterations: &[usize], series: &[Series]) -> String {
    let max_iter = iterations.iter().copied().max().unwrap_or(1).max(2) as f64;
    let min_iter = iterations.iter().copied().min().unwrap_or(1) as f64;
    let plot_w = CHART_W - MARGIN_L - MARGIN_R;
    let plot_h = CHART_H - MARGIN_T - MARGIN_B;
    let x = |it: f64| MARGIN_L + (it - min_iter) / (max_iter - min_iter).max(1.0) * plot_w;
    let y = |acc: f64| MARGIN_T + (1.0 - acc) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">"
    );
    let _ = writeln!(s, "  <rect width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        CHART_W / 2.0
    );
    // Gridlines and y labels every 25%.
    for tick in 0..=4 {
        let acc = tick as f64 * 0.25;
        let yy = y(acc);
        let _ = writeln!(
            s,
            "  <line x1=\"{MARGIN_L}\" y1=\"{yy:.1}\" x2=\"{:.1}\" y2=\"{yy:.1}\" stroke=\"#dddddd\"/>",
            CHART_W - MARGIN_R
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.0}%</text>",
            MARGIN_L - 6.0,
            yy + 4.0,
            acc * 100.0
        );
    }
    // X ticks at each iteration.
    for &it in iterations {
        let xx = x(it as f64);
        let _ = writeln!(
            s,
            "  <text x=\"{xx:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{it}</text>",
            CHART_H - MARGIN_B + 16.0
        );
    }
    // Axes.
    let _ = writeln!(
        s,
        "  <line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>",
        CHART_H - MARGIN_B
    );
    let _ = writeln!(
        s,
        "  <line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        CHART_H - MARGIN_B,
        CHART_W - MARGIN_R,
        CHART_H - MARGIN_B
    );
    let _ = writeln!(
        s,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">iteration</text>",
        MARGIN_L + plot_w / 2.0,
        CHART_H - 12.0
    );
    // Series polylines plus a small legend.
    for (k, ser) in series.iter().enumerate() {
        let points: Vec<String> = iterations
            .iter()
            .zip(ser.values)
            .map(|(&it, &acc)| format!("{:.1},{:.1}", x(it as f64), y(acc)))
            .collect();
        let _ = writeln!(
            s,
            "  <polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
            ser.color,
            points.join(" ")
        );
        let ly = MARGIN_T + 14.0 * k as f64;
        let lx = CHART_W - MARGIN_R - 130.0;
        let _ = writeln!(
            s,
            "  <line x1=\"{lx}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>",
            lx + 18.0,
            ser.color
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 24.0,
            ly + 4.0,
            ser.name
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write metrics.csv, summary.csv, one chart per user, and the
/// across-users global-average chart. Returns the files written.
pub fn emit_report(rounds: &[RoundMetrics], out_dir: &Path) -> Result<Vec<PathBuf>> {
    emit_report_rows(&metrics_rows(rounds), out_dir)
}

pub fn emit_report_rows(rows: &[MetricsRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no metrics to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let metrics = out_dir.join("metrics.csv");
    fs::write(&metrics, render_metrics_csv(rows))?;
    written.push(metrics);

    let summary = out_dir.join("summary.csv");
    fs::write(&summary, render_summary_csv(rows))?;
    written.push(summary);

    let series = split_by_user(rows);
    for s in &series {
        let svg = svg_line_chart(
            &format!("User {} accuracy on the public dataset", s.user),
            &s.iterations,
            &[
                Series { name: "local update", color: "#d95f02", values: &s.local },
                Series { name: "global update", color: "#1b9e77", values: &s.global },
            ],
        );
        let path = out_dir.join(format!("user_{}.svg", s.user));
        fs::write(&path, svg)?;
        written.push(path);
    }

    // Global average across users per iteration.
    let mut iterations: Vec<usize> = rows.iter().map(|r| r.iteration).collect();
    iterations.sort_unstable();
    iterations.dedup();
    let averages: Vec<f64> = iterations
        .iter()
        .map(|&it| {
            let vals: Vec<f64> =
                rows.iter().filter(|r| r.iteration == it).map(|r| r.global_acc).collect();
            mean(&vals)
        })
        .collect();
    let svg = svg_line_chart(
        "Global average accuracy across users",
        &iterations,
        &[Series { name: "global average", color: "#7570b3", values: &averages }],
    );
    let path = out_dir.join("global_average.svg");
    fs::write(&path, svg)?;
    written.push(path);

    Ok(written)
}
