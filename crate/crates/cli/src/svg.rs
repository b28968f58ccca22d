//! Static SVG figures: a Score heat map over the threshold grid and a bar
//! chart of per-fold optimal beta.

use std::fmt::Write;

use blendfuse::postprocess::{FoldOptimum, ThresholdSurface};

const MARGIN: f64 = 60.0;
const PLOT: f64 = 400.0;

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Dark blue at 0 to yellow at 1.
fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(68.0, 253.0), lerp(1.0, 231.0), lerp(84.0, 37.0))
}

/// Mean Score across `surfaces` at each grid point. All surfaces must share
/// grids.
pub fn mean_scores(surfaces: &[ThresholdSurface]) -> Vec<Vec<f64>> {
    let first = &surfaces[0];
    let (na, nb) = (first.alpha_grid.len(), first.beta_grid.len());
    let k = surfaces.len() as f64;
    (0..na)
        .map(|ai| {
            (0..nb)
                .map(|bi| surfaces.iter().map(|s| s.cell(ai, bi).score).sum::<f64>() / k)
                .collect()
        })
        .collect()
}

/// Heat map with alpha on the x axis and beta on the y axis. Colors are
/// scaled to the observed Score range.
pub fn surface_heatmap(surfaces: &[ThresholdSurface], title: &str) -> String {
    let first = &surfaces[0];
    let alphas = first.alpha_grid.values();
    let betas = first.beta_grid.values();
    let scores = mean_scores(surfaces);
    let lo = scores.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (cw, ch) = (PLOT / alphas.len() as f64, PLOT / betas.len() as f64);

    let mut out = String::new();
    let width = PLOT + 2.0 * MARGIN + 80.0;
    let height = PLOT + 2.0 * MARGIN;
    header(&mut out, width, height, title);
    for (ai, row) in scores.iter().enumerate() {
        for (bi, s) in row.iter().enumerate() {
            let x = MARGIN + ai as f64 * cw;
            let y = MARGIN + PLOT - (bi + 1) as f64 * ch;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>alpha={} beta={} score={:.4}</title></rect>"#,
                cw + 0.05,
                ch + 0.05,
                color((s - lo) / span),
                alphas[ai],
                betas[bi],
                s
            );
        }
    }
    axis_labels(&mut out, alphas, betas);
    // color bar
    let bx = MARGIN + PLOT + 20.0;
    for i in 0..50 {
        let t = i as f64 / 49.0;
        let y = MARGIN + PLOT - (i + 1) as f64 * PLOT / 50.0;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.1}" y="{y:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            PLOT / 50.0 + 0.05,
            color(t)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{lo:.3}</text>"#, bx + 20.0, MARGIN + PLOT);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{hi:.3}</text>"#, bx + 20.0, MARGIN + 10.0);
    out.push_str("</svg>\n");
    out
}

fn axis_labels(out: &mut String, alphas: &[f64], betas: &[f64]) {
    let ticks = |values: &[f64]| -> Vec<(usize, f64)> {
        let step = values.len().div_ceil(6).max(1);
        values.iter().copied().enumerate().step_by(step).collect()
    };
    let cw = PLOT / alphas.len() as f64;
    let ch = PLOT / betas.len() as f64;
    for (i, a) in ticks(alphas) {
        let x = MARGIN + (i as f64 + 0.5) * cw;
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{a:.2}</text>"#,
            MARGIN + PLOT + 16.0
        );
    }
    for (i, b) in ticks(betas) {
        let y = MARGIN + PLOT - (i as f64 + 0.5) * ch + 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{b:.2}</text>"#, MARGIN - 6.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">alpha (presence)</text>"#,
        MARGIN + PLOT / 2.0,
        MARGIN + PLOT + 36.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">beta (salience)</text>"#,
        MARGIN + PLOT / 2.0,
        MARGIN + PLOT / 2.0
    );
}

/// One bar per fold; the dashed line marks the selected beta.
pub fn beta_bars(per_fold: &[FoldOptimum], chosen: f64, title: &str) -> String {
    let top = per_fold.iter().map(|f| f.beta).fold(chosen, f64::max).max(1e-9) * 1.1;
    let slot = PLOT / per_fold.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, PLOT + 2.0 * MARGIN, PLOT + 2.0 * MARGIN, title);
    let base = MARGIN + PLOT;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{:.1}" y2="{base}" stroke="black"/>"#,
        MARGIN + PLOT
    );
    for (i, f) in per_fold.iter().enumerate() {
        let h = PLOT * f.beta / top;
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#3b528b"><title>fold {} beta={} alpha={} score={:.4}</title></rect>"##,
            base - h,
            slot * 0.7,
            f.fold,
            f.beta,
            f.alpha,
            f.score
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            base + 16.0,
            f.fold
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.2}</text>"#,
            x + slot * 0.35,
            base - h - 4.0,
            f.beta
        );
    }
    let y = base - PLOT * chosen / top;
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#e05a00" stroke-dasharray="6 4"/>"##,
        MARGIN + PLOT
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">fold</text>"#,
        MARGIN + PLOT / 2.0,
        base + 36.0
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors_span_the_ramp() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(f64::NAN), color(0.0));
    }

    #[test]
    fn bars_are_well_formed() {
        let folds = [FoldOptimum {
            fold: 0,
            alpha: 0.1,
            beta: 0.2,
            score: 0.5,
            acc_p: 0.6,
            acc_s: 0.4,
        }];
        let svg = beta_bars(&folds, 0.2, "beta");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 2);
    }
}
