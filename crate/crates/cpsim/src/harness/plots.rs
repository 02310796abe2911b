//! Minimal static SVG renderers for score distributions and metric-vs-
//! parameter curves. No plotting dependency; the output is a small
//! self-contained SVG document.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlaid histograms of two score samples (e.g. clean vs attacked).
pub fn score_histogram_svg(title: &str, series: &[(&str, &str, &[f64])], bins: usize) -> String {
    let mut svg = header(title);
    let all: Vec<f64> = series.iter().flat_map(|(_, _, v)| v.iter().copied()).collect();
    if all.is_empty() || bins == 0 {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
    let mut max_count = 0usize;
    let counted: Vec<(usize, Vec<usize>)> = series
        .iter()
        .enumerate()
        .map(|(si, (_, _, vals))| {
            let mut counts = vec![0usize; bins];
            for &v in vals.iter() {
                let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
                counts[b.min(bins - 1)] += 1;
            }
            max_count = max_count.max(counts.iter().copied().max().unwrap_or(0));
            (si, counts)
        })
        .collect();
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    for (si, counts) in &counted {
        let (name, color, _) = series[*si];
        for (b, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let h = plot_h * c as f64 / max_count.max(1) as f64;
            let x = MARGIN + b as f64 * bar_w;
            let y = HEIGHT - MARGIN - h;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"{color}\" fill-opacity=\"0.45\"/>\n"
            ));
        }
        let ly = 40.0 + 16.0 * *si as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\" fill-opacity=\"0.45\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - 180.0,
            ly - 10.0,
            WIDTH - 162.0,
            ly,
            xml_escape(name)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{hi:.3}</text>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN + 16.0,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Polyline chart of one metric across a swept parameter, one line per
/// labeled series.
pub fn metric_curve_svg(
    title: &str,
    x_label: &str,
    xs: &[f64],
    series: &[(&str, &str, Vec<f64>)],
) -> String {
    let mut svg = header(title);
    if xs.is_empty() || series.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(x_lo + 1e-9);
    let ys: Vec<f64> = series.iter().flat_map(|(_, _, v)| v.iter().copied()).collect();
    let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(y_lo + 1e-9);
    let to_px = |x: f64, y: f64| {
        (
            MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN),
            HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN),
        )
    };
    for (si, (name, color, vals)) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(vals.iter())
            .map(|(&x, &y)| {
                let (px, py) = to_px(x, y);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for (&x, &y) in xs.iter().zip(vals.iter()) {
            let (px, py) = to_px(x, y);
            svg.push_str(&format!("<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"{color}\"/>\n"));
        }
        let ly = 40.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"3\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - 180.0,
            ly - 4.0,
            WIDTH - 166.0,
            ly - 4.0,
            WIDTH - 160.0,
            ly,
            xml_escape(name)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{y_lo:.3}</text>\n\
         <text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{y_hi:.3}</text>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        xml_escape(x_label),
        HEIGHT - MARGIN,
        MARGIN - 4.0,
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_contains_series_and_is_valid_xmlish() {
        let clean = vec![0.1, 0.2, 0.15, 0.12];
        let attacked = vec![0.6, 0.7, 0.66];
        let svg = score_histogram_svg(
            "score distribution",
            &[("clean", "#4477aa", &clean), ("attacked", "#cc3311", &attacked)],
            10,
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("clean") && svg.contains("attacked"));
        assert_eq!(svg.matches("<svg").count(), 1);
    }

    #[test]
    fn curve_plots_every_point() {
        let xs = vec![3.0, 5.0, 7.0];
        let svg = metric_curve_svg(
            "ap vs cache length",
            "K",
            &xs,
            &[("ap50", "#228833", vec![0.7, 0.75, 0.72])],
        );
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("polyline"));
    }
}
