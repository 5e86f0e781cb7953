//! Static SVG tracking plots from a CSV log.

use std::fmt::Write;

use wheelleg_core::kinematics::NUM_JOINTS;

use crate::error::CliError;
use crate::log::LogTable;

const WIDTH: f64 = 960.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 50.0;
const MAX_POINTS: usize = 1500;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Series<'a> {
    label: String,
    y: &'a [f64],
    color: &'static str,
    dashed: bool,
}

/// A horizontal reference line.
struct Level {
    label: String,
    y: f64,
}

struct Panel<'a> {
    title: &'a str,
    unit: &'a str,
    series: Vec<Series<'a>>,
    levels: Vec<Level>,
}

fn range(panel: &Panel<'_>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in panel.series.iter().flat_map(|s| s.y.iter()).copied().chain(panel.levels.iter().map(|l| l.y)) {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn draw(out: &mut String, panel: &Panel<'_>, t: &[f64], top: f64) {
    let (t0, t1) = (t[0], *t.last().unwrap());
    let span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let (lo, hi) = range(panel);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let px = |v: f64| MARGIN_L + (v - t0) / span * plot_w;
    let py = |v: f64| top + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;

    let _ = writeln!(out, r##"<g class="panel"><text x="{MARGIN_L}" y="{:.1}" font-size="14">{}</text>"##, top - 8.0, panel.title);
    let _ = writeln!(out, r##"<rect x="{MARGIN_L}" y="{top:.1}" width="{plot_w:.1}" height="{PANEL_H}" fill="none" stroke="#444"/>"##);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"##, MARGIN_L - 4.0, py(v) + 3.0);
        let tv = t0 + span * k as f64 / 4.0;
        let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{tv:.2}</text>"##, px(tv), top + PANEL_H + 14.0);
    }
    let _ = writeln!(out, r##"<text x="12" y="{:.1}" font-size="11">{}</text>"##, top + PANEL_H / 2.0, panel.unit);

    for l in &panel.levels {
        let y = py(l.y);
        let _ = writeln!(
            out,
            r##"<line class="clamp" x1="{MARGIN_L}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#000" stroke-dasharray="2,3"/><text x="{:.1}" y="{:.2}" font-size="10">{}</text>"##,
            MARGIN_L + plot_w,
            MARGIN_L + plot_w + 4.0,
            y + 3.0,
            l.label
        );
    }

    let stride = t.len().div_ceil(MAX_POINTS).max(1);
    for (k, s) in panel.series.iter().enumerate() {
        let mut pts = String::new();
        for i in (0..t.len()).step_by(stride).chain(std::iter::once(t.len() - 1)) {
            if s.y[i].is_finite() {
                let _ = write!(pts, "{:.1},{:.1} ", px(t[i]), py(s.y[i]));
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"{dash}/>"##, pts.trim_end(), s.color);
        let ly = top + 12.0 + 13.0 * k as f64;
        let lx = MARGIN_L + plot_w + 10.0;
        let _ = writeln!(
            out,
            r##"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}"{dash}/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"##,
            lx + 18.0,
            s.color,
            lx + 22.0,
            ly + 3.0,
            s.label
        );
    }
    out.push_str("</g>\n");
}

/// Three panels: pitch tracking, joint tracking, contact forces and torques.
/// `torque_limit` is drawn as a pair of clamp lines on the last panel.
pub fn render_svg(log: &LogTable, torque_limit: f64) -> Result<String, CliError> {
    let t = log.column("t")?;
    let mut pitch = Panel { title: "pitch vs reference", unit: "rad", series: vec![], levels: vec![] };
    pitch.series.push(Series { label: "theta".into(), y: log.column("theta")?, color: PALETTE[0], dashed: false });
    pitch.series.push(Series { label: "theta_des".into(), y: log.column("theta_des")?, color: PALETTE[3], dashed: true });

    let mut joints = Panel { title: "joint angles vs references", unit: "rad", series: vec![], levels: vec![] };
    for j in 0..NUM_JOINTS {
        joints.series.push(Series { label: format!("q{j}"), y: log.column(&format!("q{j}"))?, color: PALETTE[j], dashed: false });
    }
    for j in 0..NUM_JOINTS {
        joints.series.push(Series { label: format!("q_des{j}"), y: log.column(&format!("q_des{j}"))?, color: PALETTE[j], dashed: true });
    }

    let mut forces = Panel { title: "contact forces and joint torques", unit: "N, N·m", series: vec![], levels: vec![] };
    for i in 0..4 {
        forces.series.push(Series { label: format!("fz{i}"), y: log.column(&format!("fz{i}"))?, color: PALETTE[i], dashed: false });
    }
    for j in 0..NUM_JOINTS {
        forces.series.push(Series { label: format!("tau{j}"), y: log.column(&format!("tau{j}"))?, color: PALETTE[j], dashed: true });
    }
    forces.levels.push(Level { label: format!("+{torque_limit}"), y: torque_limit });
    forces.levels.push(Level { label: format!("-{torque_limit}"), y: -torque_limit });

    let panels = [pitch, joints, forces];
    let height = MARGIN_T + panels.len() as f64 * (PANEL_H + GAP);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#);
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (k, p) in panels.iter().enumerate() {
        draw(&mut out, p, t, MARGIN_T + k as f64 * (PANEL_H + GAP));
    }
    out.push_str("</svg>\n");
    Ok(out)
}
