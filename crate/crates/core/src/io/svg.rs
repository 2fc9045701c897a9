use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::irt::{normalize_rate, CurveEnsemble, ItemResponseCurve};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 52.0;

#[derive(Debug, Clone, Copy)]
pub enum PlotSeries<'a> {
    Curve(&'a ItemResponseCurve),
    /// Mean curve with a ±1 standard error band.
    Ensemble(&'a CurveEnsemble),
}

impl PlotSeries<'_> {
    fn curve(&self) -> &ItemResponseCurve {
        match self {
            PlotSeries::Curve(c) => c,
            PlotSeries::Ensemble(e) => &e.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    /// Plot chance-normalized rates.
    pub normalized: bool,
    pub title: Option<String>,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            normalized: false,
            title: None,
            width: 720,
            height: 480,
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        if self.x1 > self.x0 {
            self.left + (v - self.x0) / (self.x1 - self.x0) * (self.right - self.left)
        } else {
            (self.left + self.right) / 2.0
        }
    }

    fn y(&self, v: f64) -> f64 {
        self.bottom - (v - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)
    }
}

/// Renders curves (and ensemble bands) as a standalone SVG document. Output
/// depends only on the inputs.
pub fn emit_svg(series: &[PlotSeries<'_>], options: &PlotOptions) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Input("nothing to plot".into()));
    }
    if options.width < 200 || options.height < 150 {
        return Err(Error::Config(format!(
            "plot size {}x{} is too small (minimum 200x150)",
            options.width, options.height
        )));
    }
    let rate = |c: &ItemResponseCurve, r: f64| {
        if options.normalized && !c.normalized {
            normalize_rate(r, c.chance)
        } else {
            r
        }
    };

    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0: f64 = 0.0;
    let mut y1: f64 = 1.0;
    for s in series {
        let c = s.curve();
        if c.points.is_empty() {
            return Err(Error::Input(format!("series '{}' has no points", c.label())));
        }
        for (j, p) in c.points.iter().enumerate() {
            x0 = x0.min(p.level);
            x1 = x1.max(p.level);
            let r = rate(c, p.match_rate);
            let band = match s {
                PlotSeries::Ensemble(e) => {
                    e.stderr[j]
                        * if options.normalized {
                            1.0 / (1.0 - c.chance)
                        } else {
                            1.0
                        }
                }
                PlotSeries::Curve(_) => 0.0,
            };
            y0 = y0.min(r - band);
            y1 = y1.max(r + band);
        }
    }

    let (w, h) = (f64::from(options.width), f64::from(options.height));
    let f = Frame {
        x0,
        x1,
        y0,
        y1,
        left: MARGIN_LEFT,
        right: w - MARGIN_RIGHT,
        top: MARGIN_TOP,
        bottom: h - MARGIN_BOTTOM,
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        options.width, options.height, options.width, options.height
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(title) = &options.title {
        let _ = writeln!(
            out,
            r#"<text class="title" x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            num((f.left + f.right) / 2.0),
            escape(title)
        );
    }

    // Axes and ticks.
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#,
        l = num(f.left),
        r = num(f.right),
        t = num(f.top),
        b = num(f.bottom)
    );
    for k in 0..=4 {
        let xv = x0 + (x1 - x0) * f64::from(k) / 4.0;
        let yv = y0 + (y1 - y0) * f64::from(k) / 4.0;
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            num(f.x(xv)),
            num(f.bottom + 16.0),
            num_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
            num(f.left - 6.0),
            num(f.y(yv) + 4.0),
            num_label(yv)
        );
    }
    let kinds: Vec<&str> = {
        let mut k: Vec<&str> = series.iter().map(|s| s.curve().kind.as_str()).collect();
        k.dedup();
        k
    };
    let _ = writeln!(
        out,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">{} level</text>"#,
        num((f.left + f.right) / 2.0),
        num(h - 12.0),
        escape(&kinds.join(", "))
    );
    let _ = writeln!(
        out,
        r#"<text class="axis-label" x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        num((f.top + f.bottom) / 2.0),
        num((f.top + f.bottom) / 2.0),
        if options.normalized {
            "normalized match rate"
        } else {
            "match rate"
        }
    );

    for (i, s) in series.iter().enumerate() {
        let c = s.curve();
        let color = PALETTE[i % PALETTE.len()];
        if let PlotSeries::Ensemble(e) = s {
            let scale = if options.normalized {
                1.0 / (1.0 - c.chance)
            } else {
                1.0
            };
            let upper = c
                .points
                .iter()
                .zip(&e.stderr)
                .map(|(p, se)| (p.level, rate(c, p.match_rate) + se * scale));
            let lower: Vec<(f64, f64)> = c
                .points
                .iter()
                .zip(&e.stderr)
                .map(|(p, se)| (p.level, rate(c, p.match_rate) - se * scale))
                .collect();
            let pts: Vec<String> = upper
                .chain(lower.into_iter().rev())
                .map(|(x, y)| format!("{},{}", num(f.x(x)), num(f.y(y))))
                .collect();
            let _ = writeln!(
                out,
                r#"<polygon class="band" fill="{color}" fill-opacity="0.2" stroke="none" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{},{}", num(f.x(p.level)), num(f.y(rate(c, p.match_rate)))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }

    let _ = writeln!(out, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = f.top + 8.0 + 20.0 * i as f64;
        let lx = f.right + 16.0;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/><text class="legend-entry" x="{}" y="{}">{}</text>"#,
            num(lx),
            num(y),
            num(lx + 20.0),
            num(y),
            num(lx + 26.0),
            num(y + 4.0),
            escape(&s.curve().label())
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}

fn num_label(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}
