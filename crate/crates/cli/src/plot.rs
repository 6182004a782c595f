//! Deterministic SVG figures. Every plot also writes the data it drew as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use apmae::intervene::{rows_from_csv, summarize, summary_csv};
use apmae::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    ReconTriptych,
    ClusterCount,
    Accuracy,
    ShapMap,
    Intervention,
}

pub struct Figure {
    pub svg: String,
    pub csv: String,
}

/// Rows of a CSV file addressed by column name.
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = r
            .headers()
            .map_err(|e| Error::format(0, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(e.position().map_or(0, |p| p.byte()), e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(0, format!("missing column {name:?}")))
    }

    pub fn values<T: FromStr>(&self, name: &str) -> Result<Vec<T>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse()
                    .map_err(|_| Error::format(0, format!("row {}: bad value {:?} in column {name:?}", i + 1, r[c])))
            })
            .collect()
    }
}

const FONT: &str = r#"font-family="DejaVu Sans, Arial, sans-serif" font-size="11""#;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#7f7f7f", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Svg {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let s = s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" {FONT}>{s}</text>"#);
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{stroke}"/>"#);
        }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Sequential dark-blue to yellow ramp over [0, 1].
fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 4] = [(68.0, 1.0, 84.0), (49.0, 104.0, 142.0), (53.0, 183.0, 121.0), (253.0, 231.0, 37.0)];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Axis frame with y ticks; returns a value-to-pixel map for y.
fn y_axis(svg: &mut Svg, left: f64, top: f64, bottom: f64, lo: f64, hi: f64, label: &str) -> impl Fn(f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let map = move |v: f64| bottom - (v - lo) / span * (bottom - top);
    svg.line(left, top, left, bottom, "black");
    for k in 0..=4 {
        let v = lo + span * k as f64 / 4.0;
        let y = map(v);
        svg.line(left - 4.0, y, left, y, "black");
        svg.text(left - 6.0, y + 4.0, "end", &format!("{v:.3}"));
    }
    svg.text(14.0, top - 8.0, "start", label);
    map
}

#[derive(Deserialize)]
struct ReconFile {
    n: usize,
    original: Vec<f32>,
    hidden: Vec<bool>,
    composite: Vec<f32>,
}

fn recon_triptych(text: &str) -> Result<Figure> {
    let r: ReconFile = serde_json::from_str(text).map_err(|e| Error::format(0, e.to_string()))?;
    let cells = r.n * (r.n + 1) / 2;
    for (name, len) in [("original", r.original.len()), ("hidden", r.hidden.len()), ("composite", r.composite.len())] {
        if len != cells {
            return Err(Error::format(0, format!("field {name:?} has {len} cells, expected {cells}")));
        }
    }
    let masked: Vec<Option<f32>> = r.original.iter().zip(&r.hidden).map(|(&v, &h)| (!h).then_some(v)).collect();
    let recon: Vec<Option<f32>> = r.composite.iter().zip(&r.hidden).map(|(&v, &h)| h.then_some(v)).collect();
    let panels: [(&str, Vec<Option<f32>>); 4] = [
        ("original", r.original.iter().map(|&v| Some(v)).collect()),
        ("masked", masked),
        ("reconstructed", recon),
        ("composite", r.composite.iter().map(|&v| Some(v)).collect()),
    ];
    let side = 200.0;
    let px = side / r.n as f64;
    let mut svg = Svg::new(4.0 * (side + 20.0) + 20.0, side + 50.0);
    for (k, (name, vals)) in panels.iter().enumerate() {
        let x0 = 20.0 + k as f64 * (side + 20.0);
        svg.text(x0 + side / 2.0, 20.0, "middle", name);
        svg.rect(x0, 30.0, side, side, "#eeeeee");
        let mut idx = 0;
        for i in 0..r.n {
            for j in 0..=i {
                let fill = match vals[idx] {
                    Some(v) => ramp(v as f64),
                    None => "#ffffff".to_string(),
                };
                svg.rect(x0 + j as f64 * px, 30.0 + i as f64 * px, px, px, &fill);
                idx += 1;
            }
        }
    }
    let mut csv = String::from("i,j,original,hidden,composite\n");
    let mut idx = 0;
    for i in 0..r.n {
        for j in 0..=i {
            let _ = writeln!(csv, "{i},{j},{},{},{}", r.original[idx], r.hidden[idx], r.composite[idx]);
            idx += 1;
        }
    }
    Ok(Figure { svg: svg.finish(), csv })
}

fn cluster_count(text: &str) -> Result<Figure> {
    let t = Table::parse(text)?;
    let layers: Vec<u16> = t.values("layer")?;
    let counts: Vec<usize> = t.values("clusters")?;
    let mut hist: BTreeMap<u16, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&l, &c) in layers.iter().zip(&counts) {
        *hist.entry(l).or_default().entry(c).or_default() += 1;
    }
    let max_c = counts.iter().copied().max().unwrap_or(0);
    let max_n = hist.values().flat_map(|h| h.values()).copied().max().unwrap_or(1) as f64;
    let panel_w = 40.0 + 18.0 * (max_c + 1) as f64;
    let rows = hist.len().max(1);
    let mut svg = Svg::new(panel_w + 80.0, 40.0 + 110.0 * rows as f64);
    let mut csv = String::from("layer,clusters,heads\n");
    for (k, (layer, h)) in hist.iter().enumerate() {
        let top = 30.0 + 110.0 * k as f64;
        let bottom = top + 80.0;
        let y = y_axis(&mut svg, 60.0, top, bottom, 0.0, max_n, &format!("layer {layer}: heads"));
        for c in 0..=max_c {
            let n = h.get(&c).copied().unwrap_or(0);
            let x = 64.0 + 18.0 * c as f64;
            svg.rect(x, y(n as f64), 14.0, bottom - y(n as f64), PALETTE[0]);
            svg.text(x + 7.0, bottom + 12.0, "middle", &c.to_string());
            let _ = writeln!(csv, "{layer},{c},{n}");
        }
    }
    svg.text(60.0 + panel_w / 2.0, 30.0 + 110.0 * rows as f64, "middle", "clusters per head");
    Ok(Figure { svg: svg.finish(), csv })
}

fn accuracy(text: &str) -> Result<Figure> {
    let t = Table::parse(text)?;
    let tasks: Vec<String> = t.values("task")?;
    let means: Vec<f64> = t.values("mean")?;
    let cis: Vec<f64> = t.values("ci95")?;
    let n = tasks.len();
    let mut svg = Svg::new(100.0 + 70.0 * n as f64, 300.0);
    let y = y_axis(&mut svg, 60.0, 30.0, 230.0, 0.0, 1.0, "accuracy");
    svg.line(60.0, y(0.5), 60.0 + 70.0 * n as f64, y(0.5), "#999999");
    let mut csv = String::from("task,mean,ci95\n");
    for (i, ((task, &m), &c)) in tasks.iter().zip(&means).zip(&cis).enumerate() {
        let x = 75.0 + 70.0 * i as f64;
        svg.rect(x, y(m), 40.0, y(0.0) - y(m), PALETTE[0]);
        svg.line(x + 20.0, y(m - c), x + 20.0, y(m + c), "black");
        svg.line(x + 14.0, y(m - c), x + 26.0, y(m - c), "black");
        svg.line(x + 14.0, y(m + c), x + 26.0, y(m + c), "black");
        svg.text(x + 20.0, 250.0, "middle", task);
        let _ = writeln!(csv, "{task},{m:.6},{c:.6}");
    }
    Ok(Figure { svg: svg.finish(), csv })
}

fn shap_map(text: &str) -> Result<Figure> {
    let t = Table::parse(text)?;
    let layers: Vec<u16> = t.values("layer")?;
    let heads: Vec<u16> = t.values("head")?;
    let imp: Vec<f64> = t.values("importance")?;
    let nl = layers.iter().copied().max().map_or(0, |v| v as usize + 1);
    let nh = heads.iter().copied().max().map_or(0, |v| v as usize + 1);
    let max = imp.iter().copied().fold(0.0, f64::max);
    let cell = 24.0;
    let mut svg = Svg::new(80.0 + cell * nh as f64, 60.0 + cell * nl as f64);
    svg.text(60.0, 18.0, "start", "max difference of mean Shapley value per label");
    for l in 0..nl {
        svg.text(54.0, 40.0 + cell * (l as f64 + 0.7), "end", &format!("L{l}"));
    }
    for h in 0..nh {
        svg.text(60.0 + cell * (h as f64 + 0.5), 34.0, "middle", &format!("H{h}"));
    }
    let mut csv = String::from("layer,head,importance\n");
    let mut order: Vec<usize> = (0..imp.len()).collect();
    order.sort_by_key(|&i| (layers[i], heads[i]));
    for i in order {
        let fill = if max > 0.0 { ramp(imp[i] / max) } else { ramp(0.0) };
        svg.rect(60.0 + cell * heads[i] as f64, 40.0 + cell * layers[i] as f64, cell - 1.0, cell - 1.0, &fill);
        let _ = writeln!(csv, "{},{},{:.9}", layers[i], heads[i], imp[i]);
    }
    Ok(Figure { svg: svg.finish(), csv })
}

fn intervention(text: &str) -> Result<Figure> {
    let rows = rows_from_csv(text)?;
    let points = summarize(&rows)?;
    let max_count = points.iter().map(|p| p.count).max().unwrap_or(1).max(2) as f64;
    let lo = points.iter().map(|p| p.mean_net).fold(0.0, f64::min);
    let hi = points.iter().map(|p| p.mean_net).fold(0.0, f64::max);
    let (left, right, top, bottom) = (60.0, 460.0, 30.0, 250.0);
    let mut svg = Svg::new(600.0, 290.0);
    let y = y_axis(&mut svg, left, top, bottom, lo, hi, "net change in correct predictions");
    let x = |c: f64| left + (c.ln() / max_count.ln()) * (right - left);
    svg.line(left, y(0.0), right, y(0.0), "#999999");
    let mut tick = 1.0;
    while tick <= max_count {
        svg.line(x(tick), bottom, x(tick), bottom + 4.0, "black");
        svg.text(x(tick), bottom + 16.0, "middle", &format!("{tick}"));
        tick *= 10.0;
    }
    svg.text((left + right) / 2.0, bottom + 32.0, "middle", "heads zeroed (log scale)");
    let mut modes: BTreeMap<_, Vec<(f64, f64)>> = BTreeMap::new();
    for p in &points {
        modes.entry(p.mode).or_default().push((x(p.count as f64), y(p.mean_net)));
    }
    for (k, (mode, pts)) in modes.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        svg.polyline(pts, color);
        svg.rect(right + 20.0, top + 16.0 * k as f64, 10.0, 10.0, color);
        svg.text(right + 36.0, top + 9.0 + 16.0 * k as f64, "start", mode.name());
    }
    Ok(Figure {
        svg: svg.finish(),
        csv: summary_csv(&points),
    })
}

pub fn render(kind: PlotKind, text: &str) -> Result<Figure> {
    match kind {
        PlotKind::ReconTriptych => recon_triptych(text),
        PlotKind::ClusterCount => cluster_count(text),
        PlotKind::Accuracy => accuracy(text),
        PlotKind::ShapMap => shap_map(text),
        PlotKind::Intervention => intervention(text),
    }
}

/// Writes `<stem>.svg` and `<stem>.csv`.
pub fn write_figure(fig: &Figure, stem: &Path) -> Result<()> {
    apmae::io::write_atomic(stem.with_extension("svg"), fig.svg.as_bytes())?;
    apmae::io::write_atomic(stem.with_extension("csv"), fig.csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
        assert_eq!(ramp(f64::NAN), ramp(0.0));
    }

    #[test]
    fn schema_errors_name_the_column() {
        let err = render(PlotKind::ShapMap, "layer,head\n0,1\n").err().unwrap();
        assert!(err.to_string().contains("\"importance\""), "{err}");
        let err = render(PlotKind::ClusterCount, "layer,head,clusters\n0,1,many\n").err().unwrap();
        assert!(err.to_string().contains("\"clusters\""), "{err}");
    }

    #[test]
    fn figures_are_deterministic() {
        let stats = "layer,head,clusters\n0,0,2\n0,1,0\n1,0,3\n1,1,2\n";
        let a = render(PlotKind::ClusterCount, stats).unwrap();
        let b = render(PlotKind::ClusterCount, stats).unwrap();
        assert_eq!(a.svg, b.svg);
        assert!(a.svg.starts_with("<svg"));
        assert!(a.csv.starts_with("layer,clusters,heads\n0,0,1\n0,1,0\n0,2,1\n"));
    }

    #[test]
    fn triptych_checks_cell_counts() {
        let good = r#"{"n":2,"original":[0.1,0.2,0.3],"hidden":[false,true,false],"composite":[0.1,0.25,0.3]}"#;
        let fig = render(PlotKind::ReconTriptych, good).unwrap();
        assert_eq!(fig.csv.lines().count(), 4);
        let bad = r#"{"n":3,"original":[0.1],"hidden":[false],"composite":[0.1]}"#;
        assert!(render(PlotKind::ReconTriptych, bad).err().unwrap().to_string().contains("original"));
    }
}
