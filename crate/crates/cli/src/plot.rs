//! Static SVG plots rendered by hand: a log-log convergence chart and an
//! exceedance-probability chart. No display server, no scripting, no
//! external assets; byte output depends only on the data passed in.

use std::io;
use std::path::Path;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 58.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    /// Positive (x, y) pairs; nonpositive entries are invalid here.
    pub points: &'a [(f64, f64)],
}

pub struct ExceedanceSeries<'a> {
    pub label: &'a str,
    pub epsilons: &'a [f64],
    pub probabilities: &'a [f64],
    /// Wilson interval per grid point.
    pub intervals: &'a [(f64, f64)],
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT
            - MARGIN_B
            - (v - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn span(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo <= hi).then_some((lo, hi))
}

fn padded(lo: f64, hi: f64, floor_pad: f64) -> (f64, f64) {
    let pad = (0.06 * (hi - lo)).max(floor_pad);
    (lo - pad, hi + pad)
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"Helvetica, Arial, sans-serif\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n\
         <text x=\"{:.1}\" y=\"28\" font-size=\"17\" text-anchor=\"middle\" fill=\"#111111\">{title}</text>\n",
        WIDTH / 2.0
    )
}

fn axes_box() -> String {
    format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    )
}

fn decade_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let first = lo.ceil() as i64;
    let last = hi.floor() as i64;
    if first > last {
        return vec![lo, hi];
    }
    let mut ticks: Vec<f64> = (first..=last).map(|d| d as f64).collect();
    // A single in-range decade makes a bare axis; frame ends carry labels too.
    if ticks.len() < 2 {
        ticks.insert(0, lo);
        ticks.push(hi);
    }
    ticks
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111111\">{x_label}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 14.0
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111111\" \
         transform=\"rotate(-90 18 {:.1})\">{y_label}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));
}

fn log_tick_text(d: f64) -> String {
    if (d - d.round()).abs() < 1e-9 {
        format!("1e{}", d.round() as i64)
    } else {
        format!("{:.2}", 10f64.powf(d))
    }
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    let x = MARGIN_L + 14.0;
    let mut y = MARGIN_T + 18.0;
    for (label, color) in entries {
        out.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#111111\">{label}</text>\n",
            y - 4.0,
            x + 22.0,
            y - 4.0,
            x + 28.0,
            y
        ));
        y += 17.0;
    }
}

/// Log-log chart of one or more (parameter, error) series with an optional
/// fitted power law drawn through the data. `fit` is (slope, intercept)
/// with base-2 logs, i.e. y = 2^intercept * x^slope.
pub fn log_log_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    series: &[Series<'_>],
    fit: Option<(f64, f64)>,
) -> io::Result<()> {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    if all.is_empty() || all.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "log-log plot needs positive data",
        ));
    }
    let (x_lo, x_hi) = span(all.iter().map(|p| p.0.log10())).expect("nonempty");
    let (y_lo, y_hi) = span(all.iter().map(|p| p.1.log10())).expect("nonempty");
    let (x_min, x_max) = padded(x_lo, x_hi, 0.25);
    let (y_min, y_max) = padded(y_lo, y_hi, 0.25);
    let frame = Frame {
        x_min,
        x_max,
        y_min,
        y_max,
    };

    let mut out = header(title);
    for d in decade_ticks(x_min, x_max) {
        let px = frame.x(d);
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{MARGIN_T}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#111111\">{}</text>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 16.0,
            log_tick_text(d)
        ));
    }
    for d in decade_ticks(y_min, y_max) {
        let py = frame.y(d);
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\" fill=\"#111111\">{}</text>\n",
            WIDTH - MARGIN_R,
            MARGIN_L - 6.0,
            py + 4.0,
            log_tick_text(d)
        ));
    }
    out.push_str(&axes_box());

    if let Some((slope, intercept)) = fit {
        // Base-2 fit in base-10 coordinates: log10 y = s log10 x + i log10 2.
        let line = |lx10: f64| slope * lx10 + intercept * 2f64.log10();
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#777777\" \
             stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n",
            frame.x(x_lo),
            frame.y(line(x_lo)),
            frame.x(x_hi),
            frame.y(line(x_hi)),
        ));
    }

    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.x(x.log10()), frame.y(y.log10())))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for &(x, y) in s.points {
            out.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.2\" fill=\"{color}\"/>\n",
                frame.x(x.log10()),
                frame.y(y.log10())
            ));
        }
        entries.push((s.label.to_string(), color));
    }
    if let Some((slope, _)) = fit {
        entries.push((format!("fitted slope {slope:.3}"), "#777777"));
    }
    legend(&mut out, &entries);
    axis_labels(&mut out, x_label, "error");
    out.push_str("</svg>\n");
    std::fs::write(path, out)
}

/// Exceedance probabilities against the threshold grid (log-10 epsilon on
/// the x axis, probability on the y axis) with Wilson interval whiskers.
pub fn exceedance_plot(
    path: &Path,
    title: &str,
    curves: &[ExceedanceSeries<'_>],
) -> io::Result<()> {
    if curves.is_empty()
        || curves.iter().any(|c| {
            c.epsilons.is_empty()
                || c.epsilons.len() != c.probabilities.len()
                || c.epsilons.len() != c.intervals.len()
                || c.epsilons.iter().any(|&e| !(e > 0.0))
        })
    {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "exceedance plot needs aligned positive grids",
        ));
    }
    let (x_lo, x_hi) = span(
        curves
            .iter()
            .flat_map(|c| c.epsilons.iter().map(|e| e.log10())),
    )
    .expect("nonempty");
    let (x_min, x_max) = padded(x_lo, x_hi, 0.25);
    let frame = Frame {
        x_min,
        x_max,
        y_min: -0.04,
        y_max: 1.04,
    };

    let mut out = header(title);
    for d in decade_ticks(x_min, x_max) {
        let px = frame.x(d);
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{MARGIN_T}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#111111\">{}</text>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 16.0,
            log_tick_text(d)
        ));
    }
    for k in 0..=4 {
        let p = k as f64 * 0.25;
        let py = frame.y(p);
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\" fill=\"#111111\">{p:.2}</text>\n",
            WIDTH - MARGIN_R,
            MARGIN_L - 6.0,
            py + 4.0
        ));
    }
    out.push_str(&axes_box());

    let mut entries = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .epsilons
            .iter()
            .zip(c.probabilities)
            .map(|(&e, &p)| format!("{:.1},{:.1}", frame.x(e.log10()), frame.y(p)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for ((&e, &p), &(lo, hi)) in c.epsilons.iter().zip(c.probabilities).zip(c.intervals) {
            let px = frame.x(e.log10());
            out.push_str(&format!(
                "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"1\"/>\n\
                 <circle cx=\"{px:.1}\" cy=\"{:.1}\" r=\"3.0\" fill=\"{color}\"/>\n",
                frame.y(lo),
                frame.y(hi),
                frame.y(p)
            ));
        }
        entries.push((c.label.to_string(), color));
    }
    legend(&mut out, &entries);
    axis_labels(&mut out, "epsilon", "exceedance probability");
    out.push_str("</svg>\n");
    std::fs::write(path, out)
}
