//! Minimal deterministic SVG plots: scatter, line, stacked area. Output is
//! plain text with fixed-precision coordinates, so identical input always
//! produces identical bytes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("plot {title:?} has no data series")]
    NoSeries { title: String },
    #[error("series {label:?} is empty")]
    EmptySeries { label: String },
    #[error("series {label:?} contains non-finite values")]
    NonFinite { label: String },
    #[error("series {label:?} has {got} values but the x axis has {expected}")]
    LengthMismatch {
        label: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Series {
        Series {
            label: label.to_string(),
            points,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    /// Bounding box over all points, padded 5% and widened when degenerate.
    fn from_points<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = *hi - *lo;
            let pad = if span > 0.0 { 0.05 * span } else { 0.5 + lo.abs() * 0.05 };
            *lo -= pad;
            *hi += pad;
        };
        pad(&mut f.x_min, &mut f.x_max);
        pad(&mut f.y_min, &mut f.y_max);
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn validate(series: &[Series], title: &str) -> Result<(), PlotError> {
    if series.is_empty() {
        return Err(PlotError::NoSeries {
            title: title.to_string(),
        });
    }
    for s in series {
        if s.points.is_empty() {
            return Err(PlotError::EmptySeries {
                label: s.label.clone(),
            });
        }
        if !s.points.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
            return Err(PlotError::NonFinite {
                label: s.label.clone(),
            });
        }
    }
    Ok(())
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn axes(frame: &Frame, x_label: &str, y_label: &str) -> String {
    let left = MARGIN_L;
    let right = WIDTH - MARGIN_R;
    let top = MARGIN_T;
    let bottom = HEIGHT - MARGIN_B;
    let mut out = String::new();
    out.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#333\" stroke-width=\"1\"/>\n",
        right - left,
        bottom - top
    ));
    // min/max tick labels on both axes
    out.push_str(&format!(
        "<text x=\"{left}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        bottom + 16.0,
        fmt(frame.x_min)
    ));
    out.push_str(&format!(
        "<text x=\"{right}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>\n",
        bottom + 16.0,
        fmt(frame.x_max)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{bottom}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>\n",
        left - 6.0,
        fmt(frame.y_min)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>\n",
        left - 6.0,
        top + 10.0,
        fmt(frame.y_max)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{}</text>\n",
        (left + right) / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    ));
    out
}

fn legend(labels: &[&str]) -> String {
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_R - 150.0;
        out.push_str(&format!(
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            y - 9.0,
            color(i),
            x + 14.0,
            y,
            escape(label)
        ));
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter plot: one `<circle class="marker">` element per data point.
pub fn scatter_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<String, PlotError> {
    validate(series, title)?;
    let frame = Frame::from_points(series.iter().flat_map(|s| s.points.iter()));
    let mut out = header(title);
    out.push_str(&axes(&frame, x_label, y_label));
    for (i, s) in series.iter().enumerate() {
        for &(x, y) in &s.points {
            out.push_str(&format!(
                "<circle class=\"marker\" cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\" \
                 fill-opacity=\"0.7\"/>\n",
                fmt(frame.px(x)),
                fmt(frame.py(y)),
                color(i)
            ));
        }
    }
    out.push_str(&legend(&series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>()));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line plot: one `<polyline>` per series.
pub fn line_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<String, PlotError> {
    validate(series, title)?;
    let frame = Frame::from_points(series.iter().flat_map(|s| s.points.iter()));
    let mut out = header(title);
    out.push_str(&axes(&frame, x_label, y_label));
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(frame.px(x)), fmt(frame.py(y))))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            pts.join(" "),
            color(i)
        ));
    }
    out.push_str(&legend(&series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>()));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Stacked area chart: layers accumulate bottom-up, one `<path
/// class="layer">` each. All layers share the x axis and must be
/// non-negative for the stacking to make sense; negatives are rejected.
pub fn stacked_area_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    x: &[f64],
    layers: &[Series],
) -> Result<String, PlotError> {
    if layers.is_empty() {
        return Err(PlotError::NoSeries {
            title: title.to_string(),
        });
    }
    if x.is_empty() {
        return Err(PlotError::EmptySeries {
            label: "x axis".to_string(),
        });
    }
    let mut tops: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut running = vec![0.0; x.len()];
    for layer in layers {
        if layer.points.len() != x.len() {
            return Err(PlotError::LengthMismatch {
                label: layer.label.clone(),
                expected: x.len(),
                got: layer.points.len(),
            });
        }
        // stacked layers use the y of each point; x comes from the shared axis
        for (acc, (_, y)) in running.iter_mut().zip(&layer.points) {
            if !y.is_finite() || *y < 0.0 {
                return Err(PlotError::NonFinite {
                    label: layer.label.clone(),
                });
            }
            *acc += y;
        }
        tops.push(running.clone());
    }
    let y_max = running.iter().cloned().fold(0.0f64, f64::max);
    let all_pts: Vec<(f64, f64)> = x.iter().map(|&v| (v, 0.0)).chain([(x[0], y_max)]).collect();
    let frame = Frame::from_points(all_pts.iter());
    let mut out = header(title);
    out.push_str(&axes(&frame, x_label, y_label));
    let mut below = vec![0.0; x.len()];
    for (i, top) in tops.iter().enumerate() {
        let mut d = String::from("M");
        for (&xv, &yv) in x.iter().zip(top.iter()) {
            d.push_str(&format!(" {},{}", fmt(frame.px(xv)), fmt(frame.py(yv))));
        }
        for (&xv, &yv) in x.iter().zip(below.iter()).rev() {
            d.push_str(&format!(" {},{}", fmt(frame.px(xv)), fmt(frame.py(yv))));
        }
        d.push_str(" Z");
        out.push_str(&format!(
            "<path class=\"layer\" d=\"{d}\" fill=\"{}\" fill-opacity=\"0.75\" \
             stroke=\"{}\" stroke-width=\"1\"/>\n",
            color(i),
            color(i)
        ));
        below.copy_from_slice(top);
    }
    out.push_str(&legend(&layers.iter().map(|s| s.label.as_str()).collect::<Vec<_>>()));
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| (i as f64, (i * i) as f64 * 0.1)).collect()
    }

    #[test]
    fn scatter_has_one_marker_per_point() {
        let series = vec![
            Series::new("a", points(34)),
            Series::new("b", points(7)),
        ];
        let svg = scatter_svg("clouds", "x", "y", &series).unwrap();
        assert_eq!(svg.matches("class=\"marker\"").count(), 41);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn identical_input_gives_identical_bytes() {
        let series = vec![Series::new("a", points(10))];
        let one = line_svg("t", "x", "y", &series).unwrap();
        let two = line_svg("t", "x", "y", &series).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn line_plot_emits_one_polyline_per_series() {
        let series = vec![
            Series::new("a", points(5)),
            Series::new("b", points(5)),
            Series::new("c", points(5)),
        ];
        let svg = line_svg("lines", "x", "y", &series).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
    }

    #[test]
    fn stacked_area_emits_one_layer_per_series() {
        let x: Vec<f64> = (0..24).map(|h| h as f64).collect();
        let grid = Series::new("grid", x.iter().map(|&h| (h, 1.0 + h * 0.1)).collect());
        let pv = Series::new("pv", x.iter().map(|&h| (h, (h - 12.0).abs().mul_add(-0.1, 1.3).max(0.0))).collect());
        let svg = stacked_area_svg("dispatch", "hour", "kW", &x, &[grid, pv]).unwrap();
        assert_eq!(svg.matches("class=\"layer\"").count(), 2);
    }

    #[test]
    fn empty_and_mismatched_input_is_rejected() {
        assert!(matches!(
            scatter_svg("t", "x", "y", &[]),
            Err(PlotError::NoSeries { .. })
        ));
        assert!(matches!(
            line_svg("t", "x", "y", &[Series::new("e", vec![])]),
            Err(PlotError::EmptySeries { .. })
        ));
        let x = [0.0, 1.0];
        assert!(matches!(
            stacked_area_svg("t", "x", "y", &x, &[Series::new("short", vec![(0.0, 1.0)])]),
            Err(PlotError::LengthMismatch { .. })
        ));
        assert!(matches!(
            stacked_area_svg("t", "x", "y", &x, &[Series::new("neg", vec![(0.0, 1.0), (1.0, -0.5)])]),
            Err(PlotError::NonFinite { .. })
        ));
    }

    #[test]
    fn degenerate_ranges_still_render() {
        let svg = scatter_svg("dot", "x", "y", &[Series::new("a", vec![(2.0, 2.0)])]).unwrap();
        assert!(svg.contains("class=\"marker\""));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = line_svg("a<b & c", "x", "y", &[Series::new("s<1>", points(3))]).unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
        assert!(svg.contains("s&lt;1&gt;"));
    }
}
