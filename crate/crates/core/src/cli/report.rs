//! SVG rendering of a sweep CSV: speedup (red) and CER retention (blue)
//! against the threshold.

use std::fmt::Write;
use std::path::Path;

use super::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub theta: f64,
    pub sr: f64,
    pub retention: f64,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<CurvePoint>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(path, e))?;
    let headers = reader.headers().map_err(|e| CliError::data(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: missing column {name}", path.display())))
    };
    let (ti, si, ri) = (col("theta")?, col("sr_measured")?, col("cer_retention")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::data(path, e))?;
        let field = |idx: usize| -> Result<f64, CliError> {
            rec.get(idx)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 2)))
        };
        out.push(CurvePoint {
            theta: field(ti)?,
            sr: field(si)?,
            retention: field(ri)?,
        });
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())));
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(out)
}

fn upper(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if m > 0.0 {
        m * 1.1
    } else {
        1.0
    }
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

pub fn render_svg(points: &[CurvePoint]) -> String {
    let t_min = points.iter().map(|p| p.theta).fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.theta).fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = if t_max > t_min { (t_min, t_max) } else { (t_min - 0.05, t_max + 0.05) };
    let sr_hi = upper(points.iter().map(|p| p.sr));
    let ret_hi = upper(points.iter().map(|p| p.retention)).max(1.1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |t: f64| LEFT + (t - x_lo) / (x_hi - x_lo) * plot_w;
    let y = |v: f64, hi: f64| TOP + plot_h - (v.clamp(0.0, hi) / hi) * plot_h;

    let series = |val: &dyn Fn(&CurvePoint) -> f64, hi: f64| {
        points
            .iter()
            .filter(|p| val(p).is_finite())
            .map(|p| format!("{:.2},{:.2}", x(p.theta), y(val(p), hi)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g id="x-axis" data-theta-min="{}" data-theta-max="{}">"#,
        fmt(t_min),
        fmt(t_max)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    for i in 0..=4 {
        let t = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let label = match i {
            0 => fmt(t_min.max(x_lo)),
            4 => fmt(t_max.min(x_hi)),
            _ => fmt(t),
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            x(t),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">cosine similarity threshold θ</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r##"<g id="sr-axis" fill="#d62728">"##);
    let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="#d62728"/>"##, TOP + plot_h);
    for i in 0..=4 {
        let v = sr_hi * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y(v, sr_hi) + 4.0, fmt(v));
    }
    let _ = writeln!(s, r#"<text x="15" y="{:.2}" transform="rotate(-90 15 {:.2})" text-anchor="middle">speedup ratio</text>"#, TOP + plot_h / 2.0, TOP + plot_h / 2.0);
    let _ = writeln!(s, "</g>");

    let right = LEFT + plot_w;
    let _ = writeln!(s, r##"<g id="retention-axis" fill="#1f77b4">"##);
    let _ = writeln!(s, r##"<line x1="{right}" y1="{TOP}" x2="{right}" y2="{}" stroke="#1f77b4"/>"##, TOP + plot_h);
    for i in 0..=4 {
        let v = ret_hi * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="start">{}</text>"#, right + 6.0, y(v, ret_hi) + 4.0, fmt(v));
    }
    let rx = WIDTH - 15.0;
    let _ = writeln!(s, r#"<text x="{rx}" y="{:.2}" transform="rotate(90 {rx} {:.2})" text-anchor="middle">CER retention</text>"#, TOP + plot_h / 2.0, TOP + plot_h / 2.0);
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r##"<polyline id="sr" fill="none" stroke="#d62728" stroke-width="2" points="{}"/>"##,
        series(&|p| p.sr, sr_hi)
    );
    let _ = writeln!(
        s,
        r##"<polyline id="cer-retention" fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        series(&|p| p.retention, ret_hi)
    );
    let _ = writeln!(s, "</svg>");
    s
}
