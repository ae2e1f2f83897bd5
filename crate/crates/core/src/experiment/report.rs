//! Pruning-curve CSV and SVG figures: curves with a 1σ band, and score
//! histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// One aggregated grid point: mean and std over seeds of every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub score: String,
    pub method: String,
    pub end: String,
    pub prune_fraction: f64,
    pub kept: usize,
    pub seeds: usize,
    pub metrics: BTreeMap<String, (f64, f64)>,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let names: Vec<&String> = {
        let mut s: Vec<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
        s.sort();
        s.dedup();
        s
    };
    let mut out = String::from("score,method,end,prune_fraction,kept,seeds");
    for n in &names {
        write!(out, ",{n}_mean,{n}_std").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{},{},{}", r.score, r.method, r.end, r.prune_fraction, r.kept, r.seeds).unwrap();
        for n in &names {
            match r.metrics.get(*n) {
                Some((m, s)) => write!(out, ",{m},{s}").unwrap(),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_curve_csv(path: &Path, text: &str) -> Result<Vec<CurveRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| err(1, "empty file".into()))?.split(',').collect();
    if header.len() < 6 || header[..6] != ["score", "method", "end", "prune_fraction", "kept", "seeds"] {
        return Err(err(1, "unexpected header".into()));
    }
    let metric_names: Vec<&str> = header[6..]
        .chunks(2)
        .map(|c| c[0].strip_suffix("_mean").unwrap_or(c[0]))
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != header.len() {
            return Err(err(i + 2, format!("expected {} columns", header.len())));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| err(i + 2, format!("{s:?}: {e}")));
        let u = |s: &str| s.parse::<usize>().map_err(|e| err(i + 2, format!("{s:?}: {e}")));
        let mut metrics = BTreeMap::new();
        for (j, name) in metric_names.iter().enumerate() {
            let (m, s) = (c[6 + 2 * j], c[7 + 2 * j]);
            if !m.is_empty() {
                metrics.insert(name.to_string(), (f(m)?, f(s)?));
            }
        }
        rows.push(CurveRow {
            score: c[0].into(),
            method: c[1].into(),
            end: c[2].into(),
            prune_fraction: f(c[3])?,
            kept: u(c[4])?,
            seeds: u(c[5])?,
            metrics,
        });
    }
    Ok(rows)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 170.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0).max(1e-12) * (W - ML - MR)
    }
    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (H - MT - MB)
    }
}

fn axes(out: &mut String, f: &Frame, title: &str, xlabel: &str, ylabel: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title)).unwrap();
    let (l, r, t, b) = (ML, W - MR, MT, H - MB);
    writeln!(out, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let x = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let (px, py) = (f.px(x), f.py(y));
        writeln!(out, r#"<line x1="{px:.1}" y1="{b}" x2="{px:.1}" y2="{}" stroke="black"/>"#, b + 4.0).unwrap();
        writeln!(out, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, b + 18.0, fmt_tick(x)).unwrap();
        writeln!(out, r#"<line x1="{}" y1="{py:.1}" x2="{l}" y2="{py:.1}" stroke="black"/>"#, l - 4.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 7.0, py + 4.0, fmt_tick(y)).unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 12.0, esc(xlabel)).unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        esc(ylabel)
    )
    .unwrap();
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#d4a017", "#7b3fa0", "#2ca02c", "#d62728", "#8c564b", "#17becf"];

fn series_color(label: &str, i: usize) -> &'static str {
    if label.ends_with("head") {
        PALETTE[0]
    } else if label.ends_with("tail") {
        PALETTE[1]
    } else if label.starts_with("random") {
        PALETTE[2]
    } else {
        PALETTE[3 + i % 5]
    }
}

/// Metric against pruned fraction for every (method, end) series of
/// `score`, plus the random series; mean line with a ±1σ band. The
/// all-data baseline is drawn as the fraction-0 point of every series.
pub fn curve_svg(rows: &[CurveRow], score: &str, metric: &str) -> Result<String> {
    let base = rows.iter().find(|r| r.score == "baseline").and_then(|r| r.metrics.get(metric).copied());
    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.score == score || r.score == "random") {
        if let Some(&(m, s)) = r.metrics.get(metric) {
            let label = if r.score == "random" {
                format!("random {}", r.method).trim_end_matches(" random").to_string()
            } else {
                format!("{} {}", r.method, r.end)
            };
            series.entry(label).or_default().push((r.prune_fraction, m, s));
        }
    }
    if !rows.iter().any(|r| r.score == score && r.metrics.contains_key(metric)) {
        return Err(Error::invalid(format!("no {metric} rows for score {score}")));
    }
    for pts in series.values_mut() {
        if let Some((m, s)) = base {
            if !pts.iter().any(|p| p.0 == 0.0) {
                pts.push((0.0, m, s));
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all = series.values().flatten();
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut x1: f64 = 0.0;
    for &(x, m, s) in all {
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
        x1 = x1.max(x);
    }
    let pad = ((y1 - y0) * 0.1).max(1e-3);
    let f = Frame {
        x0: 0.0,
        x1: if x1 > 0.0 { x1 } else { 1.0 },
        y0: y0 - pad,
        y1: y1 + pad,
    };
    let mut out = String::new();
    axes(&mut out, &f, &format!("{score}: {metric} vs fraction pruned"), "fraction of training data pruned", metric);
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = series_color(label, i);
        let mut band = String::new();
        for (j, &(x, m, s)) in pts.iter().enumerate() {
            write!(band, "{}{:.2},{:.2} ", if j == 0 { 'M' } else { 'L' }, f.px(x), f.py(m + s)).unwrap();
        }
        for &(x, m, s) in pts.iter().rev() {
            write!(band, "L{:.2},{:.2} ", f.px(x), f.py(m - s)).unwrap();
        }
        writeln!(out, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band).unwrap();
        let line: Vec<String> = pts.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", f.px(x), f.py(m))).collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" ")).unwrap();
        for &(x, m, _) in pts {
            writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(x), f.py(m)).unwrap();
        }
        let ly = MT + 10.0 + 18.0 * i as f64;
        writeln!(out, r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#, W - MR + 15.0, ly - 10.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, W - MR + 32.0, esc(label)).unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return (vec![0.0; bins + 1], vec![0; bins]);
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (edges, counts)
}

pub fn histogram_csv(edges: &[f64], counts: &[usize]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        writeln!(out, "{},{},{c}", edges[i], edges[i + 1]).unwrap();
    }
    out
}

pub fn histogram_svg(title: &str, edges: &[f64], counts: &[usize]) -> String {
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame {
        x0: edges[0],
        x1: if edges[edges.len() - 1] > edges[0] { edges[edges.len() - 1] } else { edges[0] + 1.0 },
        y0: 0.0,
        y1: max * 1.05,
    };
    let mut out = String::new();
    axes(&mut out, &f, title, "score", "examples");
    for (i, &c) in counts.iter().enumerate() {
        let (x0, x1) = (f.px(edges[i]), f.px(edges[i + 1]));
        let (y, base) = (f.py(c as f64), f.py(0.0));
        writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white" data-count="{c}"/>"#,
            (x1 - x0).max(0.0),
            base - y,
            PALETTE[0]
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(score: &str, method: &str, end: &str, f: f64, acc: f64) -> CurveRow {
        CurveRow {
            score: score.into(),
            method: method.into(),
            end: end.into(),
            prune_fraction: f,
            kept: 10,
            seeds: 3,
            metrics: [("accuracy".to_string(), (acc, 0.01))].into_iter().collect(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("baseline", "none", "", 0.0, 0.9), row("vog", "hard", "head", 0.4, 0.88)];
        let text = curve_csv(&rows);
        assert!(text.starts_with("score,method,end,prune_fraction,kept,seeds,accuracy_mean,accuracy_std\n"));
        assert_eq!(parse_curve_csv(Path::new("c"), &text).unwrap(), rows);
    }

    #[test]
    fn svg_is_well_formed() {
        let rows = vec![
            row("baseline", "none", "", 0.0, 0.9),
            row("vog", "hard", "head", 0.4, 0.88),
            row("vog", "hard", "tail", 0.4, 0.8),
            row("random", "random", "", 0.4, 0.85),
        ];
        let svg = curve_svg(&rows, "vog", "accuracy").unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 3);
        assert!(curve_svg(&rows, "el2n", "accuracy").is_err());
    }

    #[test]
    fn histogram_counts_sum_to_n() {
        let v: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin()).collect();
        let (edges, counts) = histogram(&v, 20);
        assert_eq!(counts.iter().sum::<usize>(), 101);
        assert_eq!(edges.len(), 21);
        let svg = histogram_svg("x & y", &edges, &counts);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let total: usize = doc
            .descendants()
            .filter_map(|n| n.attribute("data-count"))
            .map(|c| c.parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 101);
        let (_, c) = histogram(&[2.0; 5], 4);
        assert_eq!(c.iter().sum::<usize>(), 5);
    }
}
