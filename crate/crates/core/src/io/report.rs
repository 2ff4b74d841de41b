use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::IoError;
use crate::ot::TransportPlan;
use crate::span::{token_frame_mass, KeyFrameRanking, SpanWeights};
use crate::tensor::PatchGrid;

/// Fixed nine-decimal rendering used by every numeric CSV column.
pub fn format_weight(v: f64) -> String {
    format!("{v:.9}")
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        IoError::io(path, e)
    })
}

fn csv_bytes(header: [&str; 3], rows: impl IntoIterator<Item = [String; 3]>) -> Result<Vec<u8>, IoError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let err = |e: csv::Error| IoError::Inconsistent(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| IoError::Inconsistent(e.to_string()))
}

/// `token,frame,weight` rows, token-major; the weight of `(i, t)` is the
/// plan mass from token `i` into all cells of frame `t`.
pub fn write_plan_csv(
    plan: &TransportPlan,
    surfaces: &[String],
    grid: &PatchGrid,
    path: &Path,
) -> Result<(), IoError> {
    if surfaces.len() != plan.rows() {
        return Err(IoError::Inconsistent(format!(
            "{} token surfaces for a plan with {} rows",
            surfaces.len(),
            plan.rows()
        )));
    }
    let mass = token_frame_mass(plan, grid).map_err(|e| IoError::Inconsistent(e.to_string()))?;
    let rows = surfaces.iter().enumerate().flat_map(|(i, s)| {
        let mass = &mass;
        (0..grid.frames).map(move |t| [s.clone(), t.to_string(), format_weight(mass[[i, t]])])
    });
    write_atomic(path, &csv_bytes(["token", "frame", "weight"], rows)?)
}

/// `span,frame,weight` rows, span-major.
pub fn write_span_csv(spans: &SpanWeights, path: &Path) -> Result<(), IoError> {
    let (n, frames) = spans.weights.dim();
    let rows = (0..n).flat_map(|s| {
        (0..frames).map(move |t| {
            [
                spans.labels[s].clone(),
                t.to_string(),
                format_weight(spans.weights[[s, t]]),
            ]
        })
    });
    write_atomic(path, &csv_bytes(["span", "frame", "weight"], rows)?)
}

/// `rank,frame,score` rows for the selected key frames; ranks start at 1.
pub fn write_ranking_csv(ranking: &KeyFrameRanking, path: &Path) -> Result<(), IoError> {
    let rows = ranking.order[..ranking.selected]
        .iter()
        .enumerate()
        .map(|(r, &(t, score))| [(r + 1).to_string(), t.to_string(), format_weight(score)]);
    write_atomic(path, &csv_bytes(["rank", "frame", "score"], rows)?)
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Stacked bars, one per frame, one colored segment per span.
pub fn render_span_svg(spans: &SpanWeights, title: &str) -> String {
    let (n, frames) = spans.weights.dim();
    let (width, height) = (640.0, 360.0);
    let (left, right, top, bottom) = (50.0, 150.0, 40.0, 40.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let totals: Vec<f64> = (0..frames).map(|t| spans.weights.column(t).sum()).collect();
    let max = totals.iter().cloned().fold(0.0, f64::max);
    let max = if max > 0.0 { max } else { 1.0 };
    let bar = plot_w / frames.max(1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + plot_h
    );
    for t in 0..frames {
        let x = left + t as f64 * bar;
        let mut y = top + plot_h;
        for s in 0..n {
            let h = spans.weights[[s, t]] / max * plot_h;
            y -= h;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} / frame {t}: {}</title></rect>"#,
                x + 0.1 * bar,
                y,
                0.8 * bar,
                h,
                PALETTE[s % PALETTE.len()],
                escape(&spans.labels[s]),
                format_weight(spans.weights[[s, t]])
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{t}</text>"#,
            x + 0.5 * bar,
            top + plot_h + 14.0
        );
    }
    for (s, label) in spans.labels.iter().enumerate() {
        let y = top + 16.0 * s as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            width - right + 10.0,
            PALETTE[s % PALETTE.len()],
            width - right + 26.0,
            y + 9.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
