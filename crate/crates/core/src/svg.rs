//! Small SVG writer for report charts.

use std::fmt::Write as _;

use crate::evaluate::BoxStats;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

/// XML-escapes text content and attribute values.
pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
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

/// An SVG document under construction. Coordinates are written with two
/// decimals so output is stable.
pub struct SvgDoc {
    width: f64,
    height: f64,
    body: String,
}

impl SvgDoc {
    pub fn new(width: f64, height: f64) -> Self {
        SvgDoc {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            w.max(0.0),
            h.max(0.0),
            escape(fill)
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{}" stroke-width="1"/>"#,
            escape(stroke)
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{}" fill-opacity="{opacity:.2}"/>"#,
            escape(fill)
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size:.0}" font-family="sans-serif" text-anchor="{}">{}</text>"#,
            escape(anchor),
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Maps data ranges onto the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn axes(&self, doc: &mut SvgDoc, title: &str, x_label: &str, y_label: &str) {
        doc.text(WIDTH / 2.0, 24.0, 16.0, "middle", title);
        doc.line(MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM, WIDTH - MARGIN_RIGHT, HEIGHT - MARGIN_BOTTOM, "black");
        doc.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM, "black");
        doc.text(WIDTH / 2.0, HEIGHT - 12.0, 12.0, "middle", x_label);
        doc.text(16.0, MARGIN_TOP - 10.0, 12.0, "start", y_label);
        for i in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let y = self.py(v);
            doc.line(MARGIN_LEFT - 4.0, y, MARGIN_LEFT, y, "black");
            doc.text(MARGIN_LEFT - 6.0, y + 4.0, 10.0, "end", &format!("{v:.2}"));
        }
    }
}

/// Grouped bars: one cluster per category, one bar per series.
pub fn bar_chart(title: &str, categories: &[String], series: &[(String, Vec<f64>)], y_label: &str) -> String {
    let mut doc = SvgDoc::new(WIDTH, HEIGHT);
    let max = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let frame = Frame::new(0.0, categories.len().max(1) as f64, 0.0, max);
    frame.axes(&mut doc, title, "", y_label);
    let slot = frame.px(1.0) - frame.px(0.0);
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let left = frame.px(c as f64) + slot * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().filter(|v| v.is_finite()).unwrap_or(0.0);
            let top = frame.py(v);
            doc.rect(left + s as f64 * bar, top, bar, frame.py(0.0) - top, PALETTE[s % PALETTE.len()]);
        }
        doc.text(left + slot * 0.4, HEIGHT - MARGIN_BOTTOM + 16.0, 11.0, "middle", cat);
    }
    for (s, (name, _)) in series.iter().enumerate() {
        let x = WIDTH - MARGIN_RIGHT - 120.0;
        let y = MARGIN_TOP + 14.0 * s as f64;
        doc.rect(x, y - 9.0, 10.0, 10.0, PALETTE[s % PALETTE.len()]);
        doc.text(x + 14.0, y, 11.0, "start", name);
    }
    doc.finish()
}

/// Box-and-whisker plot, one box per row, whiskers at min and max.
pub fn boxplot_chart(title: &str, rows: &[BoxStats], y_label: &str) -> String {
    let mut doc = SvgDoc::new(WIDTH, HEIGHT);
    let lo = rows.iter().map(|r| r.min).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if rows.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let frame = Frame::new(0.0, rows.len().max(1) as f64, lo, hi);
    frame.axes(&mut doc, title, "group", y_label);
    let slot = frame.px(1.0) - frame.px(0.0);
    for (i, r) in rows.iter().enumerate() {
        let mid = frame.px(i as f64 + 0.5);
        let half = slot * 0.3;
        doc.line(mid, frame.py(r.min), mid, frame.py(r.q1), "black");
        doc.line(mid, frame.py(r.q3), mid, frame.py(r.max), "black");
        doc.rect(mid - half, frame.py(r.q3), 2.0 * half, frame.py(r.q1) - frame.py(r.q3), PALETTE[0]);
        doc.line(mid - half, frame.py(r.median), mid + half, frame.py(r.median), "black");
        doc.text(mid, HEIGHT - MARGIN_BOTTOM + 16.0, 11.0, "middle", &r.group);
    }
    doc.finish()
}

/// Scatter of `(x, y)` points with light overplotting.
pub fn scatter_chart(title: &str, points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let mut doc = SvgDoc::new(WIDTH, HEIGHT);
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| finite.iter().map(sel).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    let frame = if finite.is_empty() {
        Frame::new(0.0, 1.0, 0.0, 1.0)
    } else {
        Frame::new(x0, x1, y0, y1)
    };
    frame.axes(&mut doc, title, x_label, y_label);
    for &(x, y) in &finite {
        doc.circle(frame.px(x), frame.py(y), 2.5, PALETTE[0], 0.3);
    }
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well_formed(svg: &str) {
        let doc = roxmltree::Document::parse(svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
        let mut d = SvgDoc::new(10.0, 10.0);
        d.text(1.0, 1.0, 10.0, "start", "<&>");
        well_formed(&d.finish());
    }

    #[test]
    fn charts_are_well_formed() {
        let cats = vec!["los".to_string(), "cost".to_string()];
        well_formed(&bar_chart("v", &cats, &[("tree".into(), vec![0.4, 1.0]), ("rules".into(), vec![f64::INFINITY, 1.5])], "var"));
        let rows = vec![BoxStats {
            group: "1".into(),
            n: 3,
            min: 1.0,
            q1: 1.5,
            median: 2.0,
            q3: 2.5,
            max: 3.0,
        }];
        well_formed(&boxplot_chart("b", &rows, "days"));
        well_formed(&boxplot_chart("b", &[], "days"));
        well_formed(&scatter_chart("s", &[(1.0, 2.0), (2.0, 2.0)], "x", "y"));
        well_formed(&scatter_chart("s", &[], "x", "y"));
    }

    #[test]
    fn output_is_stable() {
        let a = scatter_chart("s", &[(1.0, 2.0), (3.0, 1.0)], "x", "y");
        assert_eq!(a, scatter_chart("s", &[(1.0, 2.0), (3.0, 1.0)], "x", "y"));
    }
}
