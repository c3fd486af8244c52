//! Minimal self-contained SVG charts. Output depends only on the data, so
//! identical inputs give identical bytes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Linear map from a data range onto the plot's vertical extent.
struct YAxis {
    lo: f64,
    hi: f64,
}

impl YAxis {
    fn new(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo {
            0.05 * (hi - lo)
        } else {
            0.5_f64.max(hi.abs() * 0.1)
        };
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn from_zero(values: impl IntoIterator<Item = f64>) -> Self {
        let a = Self::new(values);
        Self {
            lo: a.lo.min(0.0),
            hi: a.hi.max(0.0),
        }
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.lo) / (self.hi - self.lo) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str, y_label: &str, axis: &YAxis) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text transform=\"translate(16 {:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        esc(title),
        (TOP + H - BOTTOM) / 2.0,
        esc(y_label),
    );
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.1}\" stroke=\"black\"/>\n<line x1=\"{LEFT}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - BOTTOM,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
    for k in 0..=4 {
        let v = axis.lo + (axis.hi - axis.lo) * f64::from(k) / 4.0;
        let y = axis.y(v);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{LEFT}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>",
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
}

fn x_label(out: &mut String, x: f64, text: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        H - BOTTOM + 18.0,
        esc(text)
    );
}

fn axis_title(out: &mut String, text: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        esc(text)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 4.0 + 16.0 * i as f64;
        let x = W - RIGHT - 150.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            x + 14.0,
            y + 9.0,
            esc(name)
        );
    }
}

/// One box per entry: `(label, [min, q1, median, q3, max])`.
pub fn box_plot(title: &str, y_label: &str, boxes: &[(String, [f64; 5])]) -> String {
    let axis = YAxis::new(boxes.iter().flat_map(|(_, q)| q.iter().copied()));
    let mut out = String::new();
    open(&mut out, title, y_label, &axis);
    let slot = (W - LEFT - RIGHT) / boxes.len().max(1) as f64;
    for (i, (label, q)) in boxes.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = slot * 0.25;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.4\" stroke=\"black\"/>\n\
             <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
            axis.y(q[0]),
            axis.y(q[4]),
            cx - half,
            axis.y(q[3]),
            2.0 * half,
            (axis.y(q[1]) - axis.y(q[3])).max(0.5),
            cx - half,
            axis.y(q[2]),
            cx + half,
            axis.y(q[2]),
        );
        x_label(&mut out, cx, label);
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    let axis = YAxis::from_zero(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut out = String::new();
    open(&mut out, title, y_label, &axis);
    let slot = (W - LEFT - RIGHT) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (c, label) in categories.iter().enumerate() {
        let x0 = LEFT + slot * c as f64 + slot * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            let (ya, yb) = (axis.y(v), axis.y(0.0));
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                x0 + bar * s as f64,
                ya.min(yb),
                bar * 0.9,
                (ya - yb).abs(),
                PALETTE[s % PALETTE.len()]
            );
        }
        x_label(&mut out, LEFT + slot * (c as f64 + 0.5), label);
    }
    let entries: Vec<(String, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.clone(), PALETTE[i % PALETTE.len()]))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Polylines with point markers. Consecutive pairs of series share a
/// colour, so a solid and a dashed variant of one quantity match.
pub fn line_chart(
    title: &str,
    x_title: &str,
    y_label: &str,
    series: &[(String, bool, Vec<(f64, f64)>)],
) -> String {
    let axis = YAxis::new(series.iter().flat_map(|(_, _, p)| p.iter().map(|q| q.1)));
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|(_, _, p)| p.iter().map(|q| q.0))
        .collect();
    let xlo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xhi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (xlo, xhi) = if xlo.is_finite() && xhi > xlo {
        (xlo, xhi)
    } else {
        (xlo.min(0.0) - 1.0, xhi.max(0.0) + 1.0)
    };
    let px = |x: f64| LEFT + 20.0 + (x - xlo) / (xhi - xlo) * (W - LEFT - RIGHT - 40.0);
    let mut out = String::new();
    open(&mut out, title, y_label, &axis);
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        x_label(&mut out, px(t), &format!("{t}"));
    }
    axis_title(&mut out, x_title);
    for (i, (_, dashed, pts)) in series.iter().enumerate() {
        let color = PALETTE[(i / 2) % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", px(*x), axis.y(*y)))
            .collect();
        let dash = if *dashed {
            " stroke-dasharray=\"6 4\""
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            coords.join(" ")
        );
        for c in &coords {
            let (x, y) = c.split_once(',').expect("coordinate pair");
            let _ = writeln!(
                out,
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>"
            );
        }
    }
    let entries: Vec<(String, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, (n, _, _))| (n.clone(), PALETTE[(i / 2) % PALETTE.len()]))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
