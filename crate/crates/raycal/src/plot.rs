//! Minimal SVG output: loss curves, CIR stem plots and scatter
//! heatmaps. No drawing dependencies; the files are plain text.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const ML: f64 = 70.0; // margins
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    );
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0).max(1e-300) * (W - ML - MR)
    }
    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0).max(1e-300) * (H - MT - MB)
    }

    fn frame(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let _ = write!(
            out,
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            W - ML - MR,
            H - MT - MB
        );
        for i in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * i as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let _ = write!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3e}</text>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3e}</text>\n",
                self.px(fx),
                H - MB + 16.0,
                fx,
                ML - 6.0,
                self.py(fy) + 4.0,
                fy
            );
        }
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
            (ML + W - MR) / 2.0,
            H - 14.0,
            xml_escape(xlabel),
            (MT + H - MB) / 2.0,
            (MT + H - MB) / 2.0,
            xml_escape(ylabel)
        );
    }
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Polyline of (x, y) series; one color per series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[(f64, f64)])]) -> String {
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let (x0, x1) = bounds(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)));
    let ax = Axes { x0, x1, y0, y1 };
    let mut out = header(title);
    ax.frame(&mut out, xlabel, ylabel);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", ax.px(x), ax.py(y)))
            .collect();
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            path.join(" "),
            ML + 10.0,
            MT + 16.0 + 14.0 * i as f64,
            xml_escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Stem plot of CIR tap magnitudes in dB, floored 60 dB below peak.
pub fn cir_stem_plot(title: &str, taps: &[[f64; 2]], tap_duration_s: f64) -> String {
    let mags: Vec<f64> = taps.iter().map(|t| t[0].hypot(t[1])).collect();
    let peak = mags.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let floor_db = 20.0 * peak.log10() - 60.0;
    let db: Vec<f64> = mags
        .iter()
        .map(|&m| (20.0 * m.max(1e-300).log10()).max(floor_db))
        .collect();
    let (y0, y1) = bounds(db.iter().cloned());
    let ax = Axes {
        x0: 0.0,
        x1: (taps.len() as f64 - 1.0).max(1.0) * tap_duration_s,
        y0,
        y1,
    };
    let mut out = header(title);
    ax.frame(&mut out, "delay [s]", "|h| [dB]");
    for (l, &v) in db.iter().enumerate() {
        let x = ax.px(l as f64 * tap_duration_s);
        let _ = write!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#1f77b4\"/>\n\
             <circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f77b4\"/>\n",
            ax.py(y0),
            ax.py(v),
            ax.py(v)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter heatmap: points in the xy-plane colored by value (blue low,
/// red high). Used for per-position error maps.
pub fn scatter_heatmap(title: &str, points: &[(f64, f64, f64)], value_label: &str) -> String {
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    let (v0, v1) = bounds(points.iter().map(|p| p.2));
    let ax = Axes { x0, x1, y0, y1 };
    let mut out = header(title);
    ax.frame(&mut out, "x [m]", "y [m]");
    for &(x, y, v) in points {
        let t = ((v - v0) / (v1 - v0).max(1e-300)).clamp(0.0, 1.0);
        let r = (255.0 * t) as u8;
        let b = (255.0 * (1.0 - t)) as u8;
        let _ = write!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"rgb({r},60,{b})\"/>\n",
            ax.px(x),
            ax.py(y)
        );
    }
    let _ = write!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\">{}: {:.3e} (blue) to {:.3e} (red)</text>\n",
        ML + 10.0,
        MT + 16.0,
        xml_escape(value_label),
        v0,
        v1
    );
    out.push_str("</svg>\n");
    out
}
