//! Static SVG figures written as plain markup.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 12 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// Overlaid normalised histograms, one per named group.
pub fn histogram(title: &str, x_label: &str, groups: &[(&str, &[f64])], bins: usize) -> String {
    let all: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.1.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    let mut out = String::new();
    frame(&mut out, title, x_label, "fraction");
    if all.is_empty() || bins == 0 {
        out.push_str("</svg>\n");
        return out;
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<f64>> = groups
        .iter()
        .map(|(_, vals)| {
            let mut c = vec![0.0; bins];
            let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
            for v in &finite {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                c[b] += 1.0;
            }
            let n = finite.len().max(1) as f64;
            c.iter_mut().for_each(|x| *x /= n);
            c
        })
        .collect();
    let ymax = counts
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max)
        .max(1e-12);
    let (pw, ph) = (W - 2.0 * PAD, H - 2.0 * PAD);
    let bw = pw / bins as f64;
    for (g, c) in counts.iter().enumerate() {
        let color = COLORS[g % COLORS.len()];
        for (b, v) in c.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let h = v / ymax * ph;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45"/>"#,
                PAD + b as f64 * bw,
                H - PAD - h,
                bw,
                h
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * g as f64,
            W - PAD - 105.0,
            PAD + 9.0 + 16.0 * g as f64,
            escape(groups[g].0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="10">{lo:.2}</text>"#,
        H - PAD + 14.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{hi:.2}</text>"#,
        W - PAD,
        H - PAD + 14.0
    );
    out.push_str("</svg>\n");
    out
}

/// ROC points (false-positive rate, true-positive rate) for scores where
/// higher means abnormal, from (0,0) to (1,1).
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count().max(1) as f64;
    let neg = labels.iter().filter(|&&y| y != 1).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp / neg, tp / pos));
    }
    if pts.last() != Some(&(1.0, 1.0)) {
        pts.push((1.0, 1.0));
    }
    pts
}

pub fn roc(title: &str, scores: &[f64], labels: &[u8]) -> String {
    let mut out = String::new();
    frame(&mut out, title, "false positive rate", "true positive rate");
    let (pw, ph) = (W - 2.0 * PAD, H - 2.0 * PAD);
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{}" x2="{}" y2="{PAD}" stroke="#999" stroke-dasharray="4 4"/>"##,
        H - PAD,
        W - PAD
    );
    let pts: Vec<String> = roc_points(scores, labels)
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", PAD + x * pw, H - PAD - y * ph))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
        pts.join(" "),
        COLORS[0]
    );
    out.push_str("</svg>\n");
    out
}
