//! Static SVG rendering for series and 2-D trajectories.
//!
//! Output is deterministic byte-for-byte for fixed input. The root element
//! carries machine-readable `data-xmin`/`data-xmax`/`data-ymin`/`data-ymax`
//! attributes with the rendered axis range (data extent padded by 5%).

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        // degenerate span: open a unit window around the value
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn pad(range: (f64, f64)) -> (f64, f64) {
    let span = range.1 - range.0;
    (range.0 - 0.05 * span, range.1 + 0.05 * span)
}

struct Canvas {
    body: String,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Canvas {
    fn new(xr: (f64, f64), yr: (f64, f64)) -> Canvas {
        Canvas {
            body: String::new(),
            xmin: xr.0,
            xmax: xr.1,
            ymin: yr.0,
            ymax: yr.1,
        }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.xmin) / (self.xmax - self.xmin) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.ymin) / (self.ymax - self.ymin) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&mut self, title: &str, xlabel: &str, ylabel: &str) {
        let x0 = MARGIN;
        let x1 = WIDTH - MARGIN;
        let y0 = HEIGHT - MARGIN;
        let y1 = MARGIN;
        self.body.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#333\"/>\n\
             <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333\"/>\n"
        ));
        for i in 0..=4 {
            let fx = self.xmin + (self.xmax - self.xmin) * i as f64 / 4.0;
            let fy = self.ymin + (self.ymax - self.ymin) * i as f64 / 4.0;
            let px = self.sx(fx);
            let py = self.sy(fy);
            self.body.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"#333\"/>\n",
                y0 + 4.0
            ));
            self.body.push_str(&format!(
                "<text x=\"{px}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
                y0 + 16.0,
                fmt(fx)
            ));
            self.body.push_str(&format!(
                "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"#333\"/>\n",
                x0 - 4.0
            ));
            self.body.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
                x0 - 6.0,
                py + 3.0,
                fmt(fy)
            ));
        }
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"20\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
            WIDTH / 2.0
        ));
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{xlabel}</text>\n",
            WIDTH / 2.0,
            HEIGHT - 12.0
        ));
        self.body.push_str(&format!(
            "<text x=\"14\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{ylabel}</text>\n",
            HEIGHT / 2.0,
            HEIGHT / 2.0
        ));
    }

    fn polyline(&mut self, points: &[(f64, f64)], color: &str) {
        if points.len() >= 2 {
            let path: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt(self.sx(x)), fmt(self.sy(y))))
                .collect();
            self.body.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        for &(x, y) in points {
            self.body.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{color}\"/>\n",
                fmt(self.sx(x)),
                fmt(self.sy(y))
            ));
        }
    }

    fn render(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" data-xmin=\"{}\" data-xmax=\"{}\" \
             data-ymin=\"{}\" data-ymax=\"{}\">\n<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n{}</svg>\n",
            fmt(self.xmin),
            fmt(self.xmax),
            fmt(self.ymin),
            fmt(self.ymax),
            self.body
        )
    }
}

/// Renders labeled series as polylines with point markers.
pub fn render_series(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> Result<String, PlotError> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Contract("no data to plot".into()));
    }
    let xr = pad(extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))));
    let yr = pad(extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    let mut canvas = Canvas::new(xr, yr);
    canvas.axes(title, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        canvas.polyline(&s.points, color);
        canvas.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            s.name
        ));
    }
    Ok(canvas.render())
}

pub fn emit_series(
    series: &[Series],
    title: &str,
    xlabel: &str,
    ylabel: &str,
    path: &Path,
) -> Result<(), PlotError> {
    std::fs::write(path, render_series(series, title, xlabel, ylabel)?)?;
    Ok(())
}

/// Renders 2-D state trajectories (first two state coordinates).
pub fn render_trajectories_2d(trajs: &[(String, Vec<(f64, f64)>)], title: &str) -> Result<String, PlotError> {
    let series: Vec<Series> = trajs
        .iter()
        .map(|(name, pts)| Series {
            name: name.clone(),
            points: pts.clone(),
        })
        .collect();
    render_series(&series, title, "x1", "x2")
}
