use std::fmt::Write as _;

use crate::error::Result;
use crate::overlap::OverlapMatrix;

const CELL: usize = 14;
const CHAR_W: usize = 7;
const NAN_FILL: &str = "#bdbdbd";

// Diverging scale anchored at -1, 0 and 1.
const LOW: (f64, f64, f64) = (59.0, 76.0, 192.0);
const MID: (f64, f64, f64) = (245.0, 245.0, 245.0);
const HIGH: (f64, f64, f64) = (180.0, 4.0, 38.0);

/// Fill color of an overlap value on the fixed [-1, 1] scale.
pub fn color(v: f64) -> String {
    if v.is_nan() {
        return NAN_FILL.to_string();
    }
    let v = v.clamp(-1.0, 1.0);
    let (from, to, t) = if v < 0.0 { (LOW, MID, v + 1.0) } else { (MID, HIGH, v) };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(from.0, to.0), mix(from.1, to.1), mix(from.2, to.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Same matrix with rows and columns permuted to `order`.
pub fn reorder(o: &OverlapMatrix, order: &[usize]) -> Result<OverlapMatrix> {
    let ids = order.iter().map(|&i| o.benchmark_ids()[i].clone()).collect();
    let values = order
        .iter()
        .flat_map(|&i| order.iter().map(move |&j| o.get(i, j)))
        .collect();
    OverlapMatrix::new(o.level, ids, values)
}

pub fn render_svg(o: &OverlapMatrix, title: &str) -> String {
    let n = o.len();
    let label_w = o.benchmark_ids().iter().map(|s| s.chars().count()).max().unwrap_or(0) * CHAR_W + 10;
    let top = 30 + label_w;
    let grid = n * CELL;
    let bar_x = label_w + grid + 30;
    let width = bar_x + 70;
    let height = top + grid.max(200) + 20;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="18" font-size="14">{}</text>"#, escape(title));
    for (i, id) in o.benchmark_ids().iter().enumerate() {
        let y = top + i * CELL + CELL - 3;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, label_w - 4, escape(id));
        let x = label_w + i * CELL + CELL - 3;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-90)">{}</text>"#,
            top - 4,
            escape(id)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let v = o.get(i, j);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>{} / {}: {v}</title></rect>"#,
                label_w + j * CELL,
                top + i * CELL,
                color(v),
                escape(&o.benchmark_ids()[i]),
                escape(&o.benchmark_ids()[j]),
            );
        }
    }
    // color bar, top = 1, bottom = -1
    let steps = 40;
    let bar_h = 200;
    for k in 0..steps {
        let v = 1.0 - 2.0 * (k as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x}" y="{}" width="16" height="{}" fill="{}"/>"#,
            top + k * bar_h / steps,
            bar_h / steps,
            color(v)
        );
    }
    for (label, frac) in [("1", 0usize), ("0", 1), ("-1", 2)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{label}</text>"#,
            bar_x + 22,
            top + frac * bar_h / 2 + 4
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::Level;

    #[test]
    fn scale_is_fixed() {
        assert_eq!(color(-1.0), "#3b4cc0");
        assert_eq!(color(0.0), "#f5f5f5");
        assert_eq!(color(1.0), "#b40426");
        assert_eq!(color(3.0), color(1.0));
        assert_eq!(color(f64::NAN), NAN_FILL);
    }

    #[test]
    fn svg_has_one_cell_per_entry() {
        let ids = vec!["a".to_string(), "b<c".to_string()];
        let o = OverlapMatrix::from_pairs(Level::Performance, ids, &[0.5]).unwrap();
        let svg = render_svg(&o, "performance");
        assert_eq!(svg.matches("<title>").count(), 4);
        assert!(svg.contains("b&lt;c"));
        let r = reorder(&o, &[1, 0]).unwrap();
        assert_eq!(r.benchmark_ids()[0], "b<c");
        assert_eq!(r.get(0, 1), 0.5);
    }
}
