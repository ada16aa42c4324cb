//! Deterministic SVG figures. No timestamps or random ids: identical inputs
//! give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bowsim_core::eval::stick_slip_segments;
use bowsim_core::fdm::{OscillatorConfig, Trajectory};
use bowsim_core::{FrictionParams, PhaseLabel};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Friction,
    Trajectory,
    Residuals,
    Density,
    Landscape,
    StickSlip,
}

impl PlotKind {
    pub const ALL: [PlotKind; 6] = [
        PlotKind::Friction,
        PlotKind::Trajectory,
        PlotKind::Residuals,
        PlotKind::Density,
        PlotKind::Landscape,
        PlotKind::StickSlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Friction => "friction",
            PlotKind::Trajectory => "trajectory",
            PlotKind::Residuals => "residuals",
            PlotKind::Density => "density",
            PlotKind::Landscape => "landscape",
            PlotKind::StickSlip => "stickslip",
        }
    }
}

impl FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        PlotKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = PlotKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Usage(format!("unknown plot kind '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

const W: f64 = 720.0;
const PANEL_H: f64 = 300.0;
const ML: f64 = 80.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&a) {
        let s = format!("{x:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{x:.2e}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Panel {
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn new(index: usize, x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(a, b): (f64, f64)| {
            if a.is_finite() && b.is_finite() && b > a {
                (a, b)
            } else if a.is_finite() {
                (a - 0.5, a + 0.5)
            } else {
                (0.0, 1.0)
            }
        };
        Self { top: MT + index as f64 * (PANEL_H + MB + MT), x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x.0) / (self.x.1 - self.x.0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        self.top + PANEL_H - (y - self.y.0) / (self.y.1 - self.y.0) * PANEL_H
    }
}

struct Svg {
    body: String,
    height: f64,
}

impl Svg {
    fn new(panels: usize) -> Self {
        Self { body: String::new(), height: panels as f64 * (PANEL_H + MB + MT) }
    }

    fn axes(&mut self, p: &Panel, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (ML, W - MR, p.top, p.top + PANEL_H);
        let _ = writeln!(
            self.body,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{PANEL_H:.2}" fill="none" stroke="#000"/>"##,
            x1 - x0
        );
        let _ = writeln!(self.body, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, y0 - 12.0, esc(title));
        let _ = writeln!(self.body, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, y1 + 40.0, esc(xlabel));
        let _ = writeln!(
            self.body,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(ylabel)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = p.x.0 + f * (p.x.1 - p.x.0);
            let yv = p.y.0 + f * (p.y.1 - p.y.0);
            let (xp, yp) = (p.px(xv), p.py(yv));
            let _ = writeln!(
                self.body,
                r##"<line x1="{xp:.2}" y1="{y1:.2}" x2="{xp:.2}" y2="{:.2}" stroke="#000"/><text x="{xp:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"##,
                y1 + 5.0,
                y1 + 18.0,
                num(xv)
            );
            let _ = writeln!(
                self.body,
                r##"<line x1="{:.2}" y1="{yp:.2}" x2="{x0:.2}" y2="{yp:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                yp + 4.0,
                num(yv)
            );
        }
    }

    fn polyline(&mut self, p: &Panel, xs: &[f64], ys: &[f64], color: &str, dash: bool) {
        let mut pts = String::new();
        for (x, y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", p.px(*x), p.py(*y));
            }
        }
        let dash = if dash { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>"#,
            pts.trim_end()
        );
    }

    fn legend(&mut self, p: &Panel, names: &[String]) {
        for (i, n) in names.iter().enumerate() {
            let y = p.top + 16.0 + 16.0 * i as f64;
            let c = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                self.body,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{c}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                W - MR - 150.0,
                W - MR - 130.0,
                W - MR - 125.0,
                y + 4.0,
                esc(n)
            );
        }
    }

    fn finish(self, attrs: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W:.0}\" height=\"{:.0}\" viewBox=\"0 0 {W:.0} {:.0}\" font-family=\"sans-serif\" font-size=\"13\"{attrs}>\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n{}</svg>\n",
            self.height, self.height, self.body
        )
    }
}

fn range<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Header and string cells of a comma-separated file.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CliError::Usage(format!("{}: empty file", path.display())))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect::<Vec<_>>();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(|s| s.trim().to_string()).collect()).collect();
        if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(CliError::Usage(format!("{}: row {} has {} cells, header has {}", path.display(), i + 2, rows[i].len(), header.len())));
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no column '{name}'", path.display())))?;
        self.numeric(j, path)
    }

    fn numeric(&self, j: usize, path: &Path) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("{}: row {}: '{}' is not a number", path.display(), i + 2, r[j])))
            })
            .collect()
    }
}

fn need(inputs: &[PathBuf], n: usize, kind: PlotKind) -> Result<(), CliError> {
    if inputs.len() < n {
        return Err(CliError::Usage(format!("plot {} needs {n} input file(s)", kind.name())));
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn render(kind: PlotKind, inputs: &[PathBuf], scenario: &OscillatorConfig) -> Result<String, CliError> {
    match kind {
        PlotKind::Friction => Ok(friction(scenario.friction)),
        PlotKind::Trajectory => trajectories(inputs),
        PlotKind::Residuals => residuals(inputs),
        PlotKind::Density => density(inputs),
        PlotKind::Landscape => landscape(inputs),
        PlotKind::StickSlip => stick_slip(inputs, scenario),
    }
}

fn friction(params: FrictionParams) -> String {
    let n = 1001;
    let eta: Vec<f64> = (0..n).map(|i| -0.5 + i as f64 / (n - 1) as f64).collect();
    let phi: Vec<f64> = eta.iter().map(|&e| params.phi(e)).collect();
    let dphi: Vec<f64> = eta.iter().map(|&e| params.dphi(e)).collect();
    let b = params.boundary();
    let mut svg = Svg::new(2);
    let p0 = Panel::new(0, (-0.5, 0.5), (-1.1, 1.1));
    svg.axes(&p0, &format!("friction characteristic, a = {}: max 1 at eta = {}", num(params.a), num(params.peak())), "eta", "phi");
    svg.polyline(&p0, &eta, &phi, PALETTE[0], false);
    let r = range(&dphi);
    let p1 = Panel::new(1, (-0.5, 0.5), (r.0 - 0.05 * (r.1 - r.0), r.1 + 0.05 * (r.1 - r.0)));
    svg.axes(&p1, &format!("derivative; nonlinear band |eta| <= {}", num(b)), "eta", "dphi/deta");
    svg.polyline(&p1, &eta, &dphi, PALETTE[1], false);
    for p in [&p0, &p1] {
        for x in [-b, b] {
            svg.polyline(p, &[x, x], &[p.y.0, p.y.1], "#888", true);
        }
    }
    svg.finish("")
}

fn trajectories(inputs: &[PathBuf]) -> Result<String, CliError> {
    need(inputs, 1, PlotKind::Trajectory)?;
    let mut series = Vec::new();
    for path in inputs {
        let t = Table::read(path)?;
        series.push((stem(path), t.column("t", path)?, t.column("p", path)?, t.column("q", path)?));
    }
    let xr = range(series.iter().flat_map(|s| s.1.iter()));
    let mut svg = Svg::new(2);
    let names: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
    for (k, (label, pick)) in [("p", 2usize), ("q", 3usize)].into_iter().enumerate() {
        let ys = |s: &(String, Vec<f64>, Vec<f64>, Vec<f64>)| if pick == 2 { s.2.clone() } else { s.3.clone() };
        let all: Vec<f64> = series.iter().flat_map(ys).collect();
        let panel = Panel::new(k, xr, range(&all));
        svg.axes(&panel, &format!("{label}(t)"), "t [s]", label);
        for (i, s) in series.iter().enumerate() {
            svg.polyline(&panel, &s.1, &ys(s), PALETTE[i % PALETTE.len()], i > 0);
        }
        svg.legend(&panel, &names);
    }
    Ok(svg.finish(""))
}

const BINS: usize = 60;

fn histogram(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; BINS];
    for &v in values {
        let i = (((v - lo) / (hi - lo)) * BINS as f64).floor().clamp(0.0, (BINS - 1) as f64) as usize;
        h[i] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter().map(|c| c / n).collect()
}

/// Input: CSV `series,r1,r2`; one overlaid histogram of log10|r| per series.
fn residuals(inputs: &[PathBuf]) -> Result<String, CliError> {
    need(inputs, 1, PlotKind::Residuals)?;
    let path = &inputs[0];
    let table = Table::read(path)?;
    let r1 = table.column("r1", path)?;
    let r2 = table.column("r2", path)?;
    let names = table.header.iter().position(|h| h == "series").ok_or_else(|| CliError::Usage(format!("{}: no column 'series'", path.display())))?;
    let mut order: Vec<String> = Vec::new();
    for r in &table.rows {
        if !order.contains(&r[names]) {
            order.push(r[names].clone());
        }
    }
    let log = |x: f64| x.abs().max(1e-300).log10();
    let mut svg = Svg::new(2);
    for (k, (label, col)) in [("r1", &r1), ("r2", &r2)].into_iter().enumerate() {
        let logs: Vec<f64> = col.iter().map(|&x| log(x)).collect();
        let (lo, hi) = range(&logs);
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let hists: Vec<Vec<f64>> = order
            .iter()
            .map(|name| {
                let vals: Vec<f64> =
                    table.rows.iter().zip(&logs).filter(|(r, _)| &r[names] == name).map(|(_, &v)| v).collect();
                histogram(&vals, lo, hi)
            })
            .collect();
        let ymax = hists.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
        let panel = Panel::new(k, (lo, hi), (0.0, ymax * 1.05));
        svg.axes(&panel, &format!("distribution of |{label}|"), &format!("log10 |{label}|"), "fraction");
        let xs: Vec<f64> = (0..BINS).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / BINS as f64).collect();
        for (i, h) in hists.iter().enumerate() {
            svg.polyline(&panel, &xs, h, PALETTE[i % PALETTE.len()], false);
        }
        svg.legend(&panel, &order);
    }
    Ok(svg.finish(""))
}

fn density(inputs: &[PathBuf]) -> Result<String, CliError> {
    need(inputs, 1, PlotKind::Density)?;
    let path = &inputs[0];
    let t = Table::read(path)?;
    let x = t.column("eigenvalue", path)?;
    let y = t.column("density", path)?;
    let mut svg = Svg::new(1);
    let yr = range(&y);
    let panel = Panel::new(0, range(&x), (0.0, yr.1 * 1.05));
    svg.axes(&panel, "Hessian eigenvalue density", "eigenvalue", "density");
    svg.polyline(&panel, &x, &y, PALETTE[0], false);
    Ok(svg.finish(""))
}

fn color(f: f64) -> String {
    // dark blue -> teal -> yellow
    let stops = [(0.0, [68.0, 1.0, 84.0]), (0.5, [33.0, 145.0, 140.0]), (1.0, [253.0, 231.0, 37.0])];
    let f = f.clamp(0.0, 1.0);
    let (a, b) = if f <= 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let u = (f - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + u * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Input: the landscape CSV matrix (header row of α, rows led by β).
fn landscape(inputs: &[PathBuf]) -> Result<String, CliError> {
    need(inputs, 1, PlotKind::Landscape)?;
    let path = &inputs[0];
    let t = Table::read(path)?;
    let parse = |s: &str| s.parse::<f64>().map_err(|_| CliError::Usage(format!("{}: '{s}' is not a number", path.display())));
    let alpha: Vec<f64> = t.header[1..].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
    let mut beta = Vec::new();
    let mut loss = Vec::new();
    for r in &t.rows {
        beta.push(parse(&r[0])?);
        loss.push(r[1..].iter().map(|s| parse(s)).collect::<Result<Vec<f64>, _>>()?);
    }
    let (nr, nc) = (beta.len(), alpha.len());
    if nr == 0 || nc == 0 {
        return Err(CliError::Usage(format!("{}: empty landscape", path.display())));
    }
    let logs: Vec<Vec<f64>> = loss.iter().map(|r| r.iter().map(|v| v.max(1e-300).log10()).collect()).collect();
    let (lo, hi) = range(logs.iter().flatten());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let half = |v: &[f64]| if v.len() > 1 { 0.5 * (v[1] - v[0]) } else { 0.5 };
    let (ha, hb) = (half(&alpha), half(&beta));
    let panel = Panel::new(0, (alpha[0] - ha, alpha[nc - 1] + ha), (beta[0] - hb, beta[nr - 1] + hb));
    let mut svg = Svg::new(1);
    for (j, row) in logs.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let (x0, x1) = (panel.px(alpha[i] - ha), panel.px(alpha[i] + ha));
            let (y0, y1) = (panel.py(beta[j] + hb), panel.py(beta[j] - hb));
            let _ = writeln!(
                svg.body,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x1 - x0,
                y1 - y0,
                color((v - lo) / span)
            );
        }
    }
    svg.axes(&panel, &format!("log10 loss, range [{}, {}]", num(lo), num(hi)), "alpha", "beta");
    Ok(svg.finish(&format!(" data-rows=\"{nr}\" data-cols=\"{nc}\"")))
}

/// Input: trajectory CSV `t,p,q,...`; slip segments are shaded.
fn stick_slip(inputs: &[PathBuf], config: &OscillatorConfig) -> Result<String, CliError> {
    need(inputs, 1, PlotKind::StickSlip)?;
    let path = &inputs[0];
    let t = Table::read(path)?;
    let ts = t.column("t", path)?;
    let p = t.column("p", path)?;
    let q = t.column("q", path)?;
    if ts.len() < 2 {
        return Err(CliError::Usage(format!("{}: need at least two samples", path.display())));
    }
    let rate = (ts.len() - 1) as f64 / (ts[ts.len() - 1] - ts[0]);
    let traj = Trajectory { sample_rate: rate, t0: ts[0], p: p.clone(), q };
    let segments = stick_slip_segments(&traj, config);
    let eta: Vec<f64> = p.iter().map(|v| v - config.bow_velocity).collect();
    let b = config.friction.boundary();
    let yr = range(eta.iter().chain([&-b, &b]));
    let panel = Panel::new(0, (ts[0], ts[ts.len() - 1]), (yr.0 - 0.05, yr.1 + 0.05));
    let mut svg = Svg::new(1);
    for s in segments.iter().filter(|s| s.label == PhaseLabel::Slip) {
        let (x0, x1) = (panel.px(s.t_start), panel.px(s.t_end));
        let _ = writeln!(
            svg.body,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{PANEL_H:.2}" fill="#f4c7c3"/>"##,
            panel.top,
            (x1 - x0).max(0.5)
        );
    }
    svg.axes(&panel, &format!("relative velocity; shaded = slip (|eta| > {})", num(b)), "t [s]", "eta = p - v_B");
    for y in [-b, b] {
        svg.polyline(&panel, &[panel.x.0, panel.x.1], &[y, y], "#888", true);
    }
    svg.polyline(&panel, &ts, &eta, PALETTE[0], false);
    Ok(svg.finish(&format!(" data-segments=\"{}\"", segments.len())))
}
