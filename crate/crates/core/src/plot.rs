//! Dependency-free SVG figures with CSV twins.
//!
//! Each SVG embeds its CSV verbatim in a `<metadata>` element so the plotted
//! numbers can be recovered from the figure alone.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metric::BootstrapCdf;
use crate::spectral::Frf11;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const REFERENCE_COLOR: &str = "#000000";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

/// Extracts the CSV embedded by this module from an SVG document.
pub fn embedded_csv(svg: &str) -> Option<&str> {
    let start = svg.find("<![CDATA[")? + "<![CDATA[".len();
    let end = start + svg[start..].find("]]>")?;
    Some(&svg[start..end])
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, log: bool, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if log {
            (
                lo.log10().floor(),
                hi.log10().ceil().max(lo.log10().floor() + 1.0),
            )
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        };
        Self {
            lo,
            hi,
            log,
            px_lo,
            px_hi,
        }
    }

    fn px(&self, v: f64) -> f64 {
        let v = if self.log { v.max(1e-300).log10() } else { v };
        let t = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        self.px_lo + t * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            (self.lo as i32..=self.hi as i32)
                .map(|e| 10f64.powi(e))
                .collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| *s >= raw)
                .unwrap_or(10.0 * mag);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|i| i as f64 * step).collect()
        }
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Panel {
    x: Axis,
    y: Axis,
    top: f64,
    bottom: f64,
    left: f64,
    right: f64,
}

impl Panel {
    fn new(x: (f64, f64, bool), y: (f64, f64, bool), rect: (f64, f64, f64, f64)) -> Self {
        let (left, top, right, bottom) = rect;
        Self {
            x: Axis::new(x.0, x.1, x.2, left, right),
            y: Axis::new(y.0, y.1, y.2, bottom, top),
            top,
            bottom,
            left,
            right,
        }
    }

    fn frame(&self, out: &mut String, x_label: &str, y_label: &str, title: &str) {
        let (l, t, r, b) = (self.left, self.top, self.right, self.bottom);
        writeln!(
            out,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            r - l,
            b - t
        )
        .unwrap();
        for v in self.x.ticks() {
            let px = self.x.px(v);
            writeln!(
                out,
                r##"<line x1="{px:.2}" y1="{t:.2}" x2="{px:.2}" y2="{b:.2}" stroke="#ddd"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##,
                b + 14.0,
                tick_label(v)
            )
            .unwrap();
        }
        for v in self.y.ticks() {
            let py = self.y.px(v);
            writeln!(
                out,
                r##"<line x1="{l:.2}" y1="{py:.2}" x2="{r:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                l - 4.0,
                py + 4.0,
                tick_label(v)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x_label}</text>"#,
            (l + r) / 2.0,
            b + 30.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{y_label}</text>"#,
            l - 44.0,
            (t + b) / 2.0,
            l - 44.0,
            (t + b) / 2.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{title}</text>"#,
            (l + r) / 2.0,
            t - 8.0
        )
        .unwrap();
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.x.px(x), self.y.px(y)))
            .collect();
        let dash = if dashed {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            coords.join(" ")
        )
        .unwrap();
        for &(x, y) in pts {
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                self.x.px(x),
                self.y.px(y)
            )
            .unwrap();
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open_svg(width: f64, height: f64, csv: &str) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(out, "<metadata><![CDATA[{csv}]]></metadata>").unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    out
}

fn legend(out: &mut String, x: f64, y: f64, entries: &[(String, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            x + 18.0,
            x + 22.0,
            yy + 4.0,
            escape(name)
        )
        .unwrap();
    }
}

/// Gain (log-log) and phase (semilog) panels for labelled FRFs; the optional
/// reference mean is drawn dashed in black.
pub fn plot_frf(series: &[(String, Frf11)], reference_mean: Option<&Frf11>) -> Result<Figure> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let mut all: Vec<(String, &Frf11, &str, bool)> = series
        .iter()
        .enumerate()
        .map(|(i, (n, f))| (n.clone(), f, PALETTE[i % PALETTE.len()], false))
        .collect();
    if let Some(m) = reference_mean {
        all.push(("reference_mean".into(), m, REFERENCE_COLOR, true));
    }

    let mut csv = String::from("series,f_hz,gain,phase_deg\n");
    for (name, frf, _, _) in &all {
        for ((f, g), p) in frf.centers_hz.iter().zip(frf.gain()).zip(frf.phase_deg()) {
            writeln!(csv, "{name},{f},{g},{p}").unwrap();
        }
    }

    let fmin = all
        .iter()
        .flat_map(|s| s.1.centers_hz)
        .fold(f64::INFINITY, f64::min);
    let fmax = all.iter().flat_map(|s| s.1.centers_hz).fold(0.0, f64::max);
    let gains: Vec<f64> = all
        .iter()
        .flat_map(|s| s.1.gain())
        .filter(|g| *g > 0.0)
        .collect();
    let gmin = gains.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    let gmax = gains.iter().cloned().fold(0.0, f64::max).max(1.0);
    let phases: Vec<f64> = all.iter().flat_map(|s| s.1.phase_deg()).collect();
    let pmin = phases.iter().cloned().fold(-180.0, f64::min);
    let pmax = phases.iter().cloned().fold(180.0, f64::max);

    let (w, h) = (760.0, 620.0);
    let gain = Panel::new(
        (fmin, fmax, true),
        (gmin, gmax, true),
        (80.0, 40.0, 580.0, 280.0),
    );
    let phase = Panel::new(
        (fmin, fmax, true),
        (pmin, pmax, false),
        (80.0, 350.0, 580.0, 570.0),
    );
    let mut svg = open_svg(w, h, &csv);
    gain.frame(&mut svg, "frequency [Hz]", "gain", "FRF gain");
    phase.frame(&mut svg, "frequency [Hz]", "phase [deg]", "FRF phase");
    for (_, frf, color, dashed) in &all {
        let g: Vec<(f64, f64)> = frf.centers_hz.iter().copied().zip(frf.gain()).collect();
        let p: Vec<(f64, f64)> = frf
            .centers_hz
            .iter()
            .copied()
            .zip(frf.phase_deg())
            .collect();
        gain.polyline(&mut svg, &g, color, *dashed);
        phase.polyline(&mut svg, &p, color, *dashed);
    }
    let entries: Vec<(String, &str)> = all.iter().map(|s| (s.0.clone(), s.2)).collect();
    legend(&mut svg, 600.0, 60.0, &entries);
    svg.push_str("</svg>\n");
    Ok(Figure { svg, csv })
}

/// Bootstrap CDF (mean with a one-standard-deviation band) and one marker per
/// scored controller, on a logarithmic score axis.
pub fn plot_cdf(curve: &BootstrapCdf, markers: &[(String, f64, f64)]) -> Result<Figure> {
    if curve.grid.is_empty() {
        return Err(Error::InvalidArgument("empty CDF grid".into()));
    }
    let mut csv = String::from("kind,label,score,cdf,cdf_variance\n");
    for ((s, m), v) in curve.grid.iter().zip(&curve.mean).zip(&curve.variance) {
        writeln!(csv, "curve,bootstrap,{s},{m},{v}").unwrap();
    }
    for (label, d, p) in markers {
        writeln!(csv, "marker,{label},{d},{p},").unwrap();
    }

    let positive = curve
        .grid
        .iter()
        .chain(markers.iter().map(|m| &m.1))
        .copied()
        .filter(|x| *x > 0.0);
    let (smin, smax) = positive.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    let smin = if smin.is_finite() { smin } else { 0.1 };
    let smax = smax.max(smin * 10.0);

    let (w, h) = (760.0, 420.0);
    let panel = Panel::new(
        (smin, smax, true),
        (0.0, 1.0, false),
        (80.0, 40.0, 580.0, 360.0),
    );
    let mut svg = open_svg(w, h, &csv);
    panel.frame(
        &mut svg,
        "score D",
        "cumulative fraction",
        "Cohort score distribution",
    );

    let pts: Vec<(f64, f64)> = curve
        .grid
        .iter()
        .zip(&curve.mean)
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, m)| (*s, *m))
        .collect();
    let band_hi: Vec<String> = curve
        .grid
        .iter()
        .zip(curve.mean.iter().zip(&curve.variance))
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, (m, v))| {
            format!(
                "{:.2},{:.2}",
                panel.x.px(*s),
                panel.y.px((m + v.sqrt()).min(1.0))
            )
        })
        .collect();
    let band_lo: Vec<String> = curve
        .grid
        .iter()
        .zip(curve.mean.iter().zip(&curve.variance))
        .filter(|(s, _)| **s > 0.0)
        .rev()
        .map(|(s, (m, v))| {
            format!(
                "{:.2},{:.2}",
                panel.x.px(*s),
                panel.y.px((m - v.sqrt()).max(0.0))
            )
        })
        .collect();
    writeln!(
        svg,
        r##"<polygon points="{} {}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        band_hi.join(" "),
        band_lo.join(" ")
    )
    .unwrap();
    let line: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", panel.x.px(x), panel.y.px(y)))
        .collect();
    writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        line.join(" ")
    )
    .unwrap();

    let mut entries = vec![("bootstrap CDF".to_string(), "#1f77b4")];
    for (i, (label, d, p)) in markers.iter().enumerate() {
        let color = PALETTE[(i + 1) % PALETTE.len()];
        let (x, y) = (panel.x.px(*d), panel.y.px(*p));
        writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/><circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#,
            panel.top,
            panel.bottom
        )
        .unwrap();
        entries.push((format!("{label}: D={d:.4}, CDF={:.2}%", 100.0 * p), color));
    }
    legend(&mut svg, 600.0, 60.0, &entries);
    svg.push_str("</svg>\n");
    Ok(Figure { svg, csv })
}
