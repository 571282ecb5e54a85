use std::fmt::Write as _;
use std::path::Path;

use ridgegrok_core::grokking::{AGGREGATE_HEADER, quantile};
use ridgegrok_core::ridge::CSV_HEADER;

use crate::error::CliError;

/// Most x positions a curve is resampled onto.
pub const MAX_POINTS: usize = 500;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const DASH: &str = "6 4";

#[derive(Debug, Clone)]
pub struct PlotStyle {
    pub log_y: bool,
    pub title: Option<String>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            log_y: true,
            title: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Schema {
    Trajectory,
    Aggregate,
}

impl Schema {
    fn columns(self) -> Vec<&'static str> {
        match self {
            Schema::Trajectory => CSV_HEADER.split(',').collect(),
            Schema::Aggregate => AGGREGATE_HEADER.split(',').collect(),
        }
    }
}

struct Table {
    schema: Schema,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path, expected: Option<Schema>) -> Result<Table, CliError> {
    let name = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {name}: {e}")))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{name}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::Input(format!("empty input: {name} has no header")));
    }
    let schema = match expected {
        Some(s) => s,
        None if headers.first().map(String::as_str) == Some("param_value") => Schema::Aggregate,
        None => Schema::Trajectory,
    };
    let want = schema.columns();
    for (i, col) in want.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == col => {}
            Some(h) => {
                return Err(CliError::Input(format!(
                    "{name}: column {} is `{h}`, expected `{col}`",
                    i + 1
                )));
            }
            None => return Err(CliError::Input(format!("{name}: missing column `{col}`"))),
        }
    }
    if let Some(extra) = headers.get(want.len()) {
        return Err(CliError::Input(format!("{name}: unexpected column `{extra}`")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("empty input: {name} has no data rows")));
    }
    Ok(Table { schema, rows })
}

fn parse_num(cell: &str, column: &str, path: &Path) -> Result<Option<f64>, CliError> {
    match cell {
        "" => Ok(None),
        "inf" => Ok(Some(f64::INFINITY)),
        s => s.parse().map(Some).map_err(|_| {
            CliError::Input(format!(
                "{}: column `{column}` has non-numeric value `{s}`",
                path.display()
            ))
        }),
    }
}

/// A curve sampled at increasing x.
type Curve = Vec<(f64, f64)>;

/// Median curve with a 10th-90th percentile band.
struct Summary {
    label: &'static str,
    dashed: bool,
    color: &'static str,
    median: Curve,
    band: Option<(Curve, Curve)>,
}

fn transform_y(v: f64, log_y: bool, floor: f64) -> f64 {
    if log_y { v.max(floor).log10() } else { v }
}

fn interpolate(curve: &Curve, x: f64) -> Option<f64> {
    let (first, last) = (curve.first()?, curve.last()?);
    if x < first.0 || x > last.0 {
        return None;
    }
    let idx = curve.partition_point(|p| p.0 < x);
    if idx == 0 {
        return Some(first.1);
    }
    let (a, b) = (curve[idx - 1], curve[idx.min(curve.len() - 1)]);
    if b.0 == a.0 {
        return Some(b.1);
    }
    Some(a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1))
}

/// Resamples each run onto a common grid and takes percentiles across runs.
fn summarize_runs(runs: &[Curve], label: &'static str, dashed: bool, color: &'static str) -> Summary {
    let lo = runs
        .iter()
        .filter_map(|c| c.first())
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min);
    let hi = runs
        .iter()
        .filter_map(|c| c.last())
        .map(|p| p.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
    let k = longest.clamp(1, MAX_POINTS);
    let grid: Vec<f64> = if k == 1 || hi <= lo {
        vec![lo]
    } else {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    let mut median = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for &x in &grid {
        let mut vals: Vec<f64> = runs.iter().filter_map(|c| interpolate(c, x)).collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        median.push((x, quantile(&vals, 0.5)));
        lower.push((x, quantile(&vals, 0.1)));
        upper.push((x, quantile(&vals, 0.9)));
    }
    Summary {
        label,
        dashed,
        color,
        median,
        band: (runs.len() > 1).then_some((lower, upper)),
    }
}

fn trajectory_curves(tables: &[(&Path, Table)], log_y: bool) -> Result<Vec<Summary>, CliError> {
    let mut parsed = Vec::new();
    let mut floor = f64::INFINITY;
    for (path, t) in tables {
        let mut pts = Vec::new();
        for row in &t.rows {
            let step = parse_num(&row[0], "step", path)?.unwrap_or(0.0);
            let train = parse_num(&row[1], "train_loss", path)?;
            let test = parse_num(&row[2], "test_loss", path)?;
            for v in [train, test].into_iter().flatten() {
                if v > 0.0 {
                    floor = floor.min(v);
                }
            }
            pts.push(((step + 1.0).log10(), train, test));
        }
        parsed.push(pts);
    }
    if !floor.is_finite() {
        floor = 1e-300;
    }
    let pick = |which: usize| -> Vec<Curve> {
        parsed
            .iter()
            .map(|pts| {
                pts.iter()
                    .filter_map(|(x, a, b)| {
                        let v = if which == 0 { *a } else { *b };
                        v.filter(|v| v.is_finite())
                            .map(|v| (*x, transform_y(v, log_y, floor)))
                    })
                    .collect()
            })
            .collect()
    };
    Ok(vec![
        summarize_runs(&pick(0), "train", true, "#1f77b4"),
        summarize_runs(&pick(1), "test", false, "#d62728"),
    ])
}

fn aggregate_curves(tables: &[(&Path, Table)], log_y: bool) -> Result<Vec<Summary>, CliError> {
    // Group t values by param value, across every input file.
    let mut cells: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for (path, t) in tables {
        for row in &t.rows {
            let Some(p) = parse_num(&row[0], "param_value", path)? else {
                return Err(CliError::Input(format!(
                    "{}: aggregate rows need a param_value to plot against",
                    path.display()
                )));
            };
            let t1 = parse_num(&row[3], "t1", path)?;
            let t2 = parse_num(&row[4], "t2", path)?;
            let idx = match cells.iter().position(|c| c.0 == p) {
                Some(i) => i,
                None => {
                    cells.push((p, Vec::new(), Vec::new()));
                    cells.len() - 1
                }
            };
            cells[idx].1.extend(t1);
            cells[idx].2.extend(t2);
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    if cells.iter().any(|c| c.0 <= 0.0) {
        return Err(CliError::Input(
            "param_value must be positive for a log-scaled x axis".into(),
        ));
    }
    let series = |which: usize, label, dashed, color| {
        let mut median = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for c in &cells {
            let mut vals: Vec<f64> = if which == 0 { c.1.clone() } else { c.2.clone() };
            vals.retain(|v| v.is_finite());
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            let x = c.0.log10();
            let ty = |v: f64| transform_y(v, log_y, 1.0);
            median.push((x, ty(quantile(&vals, 0.5))));
            lower.push((x, ty(quantile(&vals, 0.1))));
            upper.push((x, ty(quantile(&vals, 0.9))));
        }
        Summary {
            label,
            dashed,
            color,
            median,
            band: Some((lower, upper)),
        }
    };
    Ok(vec![
        series(0, "t1", true, "#1f77b4"),
        series(1, "t2", false, "#d62728"),
    ])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick positions at a 1-2-5 spacing covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn render(curves: &[Summary], x_label: &str, y_label: &str, style: &PlotStyle) -> Result<String, CliError> {
    let all = curves.iter().flat_map(|c| {
        c.median
            .iter()
            .chain(c.band.iter().flat_map(|(a, b)| a.iter().chain(b)))
    });
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || !y0.is_finite() {
        return Err(CliError::Input("empty input: nothing to plot".into()));
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    y0 -= pad;
    y1 += pad;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
    let pts = |c: &Curve| {
        c.iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let w = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    w(
        &mut s,
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        ),
    );
    w(
        &mut s,
        format!(r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#),
    );
    if let Some(title) = &style.title {
        w(
            &mut s,
            format!(
                r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#,
                WIDTH / 2.0,
                escape(title)
            ),
        );
    }
    w(
        &mut s,
        format!(r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##),
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = write!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{b}\" x2=\"{x:.2}\" y2=\"{b5}\" stroke=\"#333\"/>\n\
             <text x=\"{x:.2}\" y=\"{bt}\" text-anchor=\"middle\">{}</text>\n",
            fmt_tick(t),
            b = TOP + ph,
            b5 = TOP + ph + 5.0,
            bt = TOP + ph + 18.0,
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = write!(
            s,
            "<line x1=\"{l5}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"#333\"/>\n\
             <text x=\"{lt}\" y=\"{yt:.2}\" text-anchor=\"end\">{}</text>\n",
            fmt_tick(t),
            l5 = LEFT - 5.0,
            lt = LEFT - 8.0,
            yt = y + 4.0,
        );
    }
    w(
        &mut s,
        format!(
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        ),
    );
    w(
        &mut s,
        format!(
            r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            escape(y_label),
            y = TOP + ph / 2.0
        ),
    );

    for c in curves {
        if let Some((lower, upper)) = &c.band
            && !lower.is_empty()
        {
            let mut ring: Curve = upper.clone();
            ring.extend(lower.iter().rev());
            w(
                &mut s,
                format!(
                    r#"<polygon class="band" data-series="{}" points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                    c.label,
                    pts(&ring),
                    c.color
                ),
            );
        }
    }
    for c in curves {
        let dash = if c.dashed {
            format!(r#" stroke-dasharray="{DASH}""#)
        } else {
            String::new()
        };
        w(
            &mut s,
            format!(
                r#"<polyline class="median" data-series="{}" points="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#,
                c.label,
                pts(&c.median),
                c.color
            ),
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT - 110.0;
        let dash = if c.dashed {
            format!(r#" stroke-dasharray="{DASH}""#)
        } else {
            String::new()
        };
        w(
            &mut s,
            format!(
                r#"<line class="legend" x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="1.8"{dash}/>"#,
                x + 30.0,
                c.color
            ),
        );
        w(
            &mut s,
            format!(
                r#"<text class="legend" x="{}" y="{}">{}</text>"#,
                x + 38.0,
                y + 4.0,
                c.label
            ),
        );
    }
    w(&mut s, "</svg>".into());
    Ok(s)
}

/// Renders trajectory CSVs (one or many runs) or aggregate CSVs as an SVG document.
pub fn plot(inputs: &[&Path], style: &PlotStyle) -> Result<String, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Input("empty input: no CSV files given".into()));
    }
    let first = read_table(inputs[0], None)?;
    let schema = first.schema;
    let mut tables = vec![(inputs[0], first)];
    for p in &inputs[1..] {
        tables.push((p, read_table(p, Some(schema))?));
    }
    let y_suffix = if style.log_y { "log10(" } else { "(" };
    match schema {
        Schema::Trajectory => {
            let curves = trajectory_curves(&tables, style.log_y)?;
            render(&curves, "log10(step + 1)", &format!("{y_suffix}loss)"), style)
        }
        Schema::Aggregate => {
            let curves = aggregate_curves(&tables, style.log_y)?;
            render(&curves, "log10(param_value)", &format!("{y_suffix}steps)"), style)
        }
    }
}
