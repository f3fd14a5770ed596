//! Experiment aggregation: per-cell mean/sd tables as CSV, and SVG line
//! plots (one polyline per series, error bars when a cell has several seeds).

use std::fmt::Write as _;
use std::path::Path;

use syncanim::metrics::MetricReport;
use syncanim::Result;

/// Metric columns every summary carries, in order.
pub const METRIC_COLS: [&str; 6] =
    ["fvd_like", "ia", "it", "relsync", "alignsync", "mean_sync_prob"];

/// Index of `mean_sync_prob` in [`METRIC_COLS`], the default plot metric.
pub const SYNC_PROB_COL: usize = 5;

pub fn metric_values(r: &MetricReport) -> [f64; 6] {
    [r.fvd_like, r.ia, r.it, r.relsync, r.alignsync, r.mean_sync_prob]
}

/// One grid cell of an experiment with its per-seed evaluation reports.
#[derive(Debug, Clone)]
pub struct CellSummary {
    /// Stable cell name, e.g. "pretrained-k5".
    pub cell: String,
    /// Plot series the cell belongs to (one polyline per series).
    pub series: String,
    /// Numeric x coordinate for plots (K, radius, variant index).
    pub x: f64,
    /// One report per seed, in seed order.
    pub reports: Vec<MetricReport>,
}

impl CellSummary {
    pub fn new(cell: &str, series: &str, x: f64) -> CellSummary {
        CellSummary { cell: cell.to_string(), series: series.to_string(), x, reports: Vec::new() }
    }

    /// Per-metric mean and sample standard deviation (n-1; zero when n < 2).
    pub fn mean_sd(&self) -> ([f64; 6], [f64; 6]) {
        let n = self.reports.len().max(1) as f64;
        let mut mean = [0.0; 6];
        let mut sd = [0.0; 6];
        for r in &self.reports {
            for (m, v) in mean.iter_mut().zip(metric_values(r)) {
                *m += v / n;
            }
        }
        if self.reports.len() > 1 {
            for r in &self.reports {
                for ((s, m), v) in sd.iter_mut().zip(mean).zip(metric_values(r)) {
                    *s += (v - m) * (v - m) / (n - 1.0);
                }
            }
            for s in &mut sd {
                *s = s.sqrt();
            }
        }
        (mean, sd)
    }

    pub fn mean_of(&self, col: usize) -> f64 {
        self.mean_sd().0[col]
    }

    pub fn sd_of(&self, col: usize) -> f64 {
        self.mean_sd().1[col]
    }
}

/// `cell,x,n_seeds,<metric>_mean...` plus `<metric>_sd` columns when any
/// cell aggregates more than one seed. One row per cell, in grid order.
pub fn summary_csv(cells: &[CellSummary]) -> String {
    let with_sd = cells.iter().any(|c| c.reports.len() > 1);
    let mut out = String::from("cell,x,n_seeds");
    for m in METRIC_COLS {
        write!(out, ",{m}_mean").unwrap();
    }
    if with_sd {
        for m in METRIC_COLS {
            write!(out, ",{m}_sd").unwrap();
        }
    }
    out.push('\n');
    for c in cells {
        let (mean, sd) = c.mean_sd();
        write!(out, "{},{},{}", c.cell, c.x, c.reports.len()).unwrap();
        for v in mean {
            write!(out, ",{v:.6}").unwrap();
        }
        if with_sd {
            for v in sd {
                write!(out, ",{v:.6}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_summary_csv(path: &Path, cells: &[CellSummary]) -> Result<()> {
    std::fs::write(path, summary_csv(cells))?;
    Ok(())
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 10000.0) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Render one metric of a cell grid as an SVG line plot. Cells sharing a
/// `series` form one polyline sorted by x; multi-seed cells get error bars.
pub fn lines_svg(title: &str, x_label: &str, y_label: &str, cells: &[CellSummary], col: usize) -> String {
    // Series in first-appearance order, points sorted by x.
    let mut series: Vec<(String, Vec<(f64, f64, f64, usize)>)> = Vec::new();
    for c in cells {
        let (mean, sd) = c.mean_sd();
        let pt = (c.x, mean[col], sd[col], c.reports.len());
        match series.iter_mut().find(|(name, _)| *name == c.series) {
            Some((_, pts)) => pts.push(pt),
            None => series.push((c.series.clone(), vec![pt])),
        }
    }
    for (_, pts) in &mut series {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let all: Vec<&(f64, f64, f64, usize)> = series.iter().flat_map(|(_, p)| p).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &all {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1 - p.2);
        y1 = y1.max(p.1 + p.2);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad_y = 0.08 * (y1 - y0);
    y0 -= pad_y;
    y1 += pad_y;
    let pad_x = 0.05 * (x1 - x0);
    x0 -= pad_x;
    x1 += pad_x;

    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (72.0, 24.0, 44.0, 56.0);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        w / 2.0
    )
    .unwrap();

    // Axes, ticks, grid.
    write!(
        s,
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr
    )
    .unwrap();
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let (cx, cy) = (px(fx), py(fy));
        write!(
            s,
            "<line x1=\"{cx}\" y1=\"{0}\" x2=\"{cx}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{cx}\" y=\"{2}\" text-anchor=\"middle\" font-size=\"11\">{3}</text>\n\
             <line x1=\"{4}\" y1=\"{cy}\" x2=\"{ml}\" y2=\"{cy}\" stroke=\"black\"/>\n\
             <line x1=\"{ml}\" y1=\"{cy}\" x2=\"{5}\" y2=\"{cy}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{6}\" y=\"{7}\" text-anchor=\"end\" font-size=\"11\">{8}</text>\n",
            h - mb,
            h - mb + 5.0,
            h - mb + 18.0,
            fmt_tick(fx),
            ml - 5.0,
            w - mr,
            ml - 8.0,
            cy + 4.0,
            fmt_tick(fy)
        )
        .unwrap();
    }
    write!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{x_label}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    )
    .unwrap();

    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        write!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n", path.join(" ")).unwrap();
        for p in pts {
            let (cx, cy) = (px(p.0), py(p.1));
            if p.3 > 1 && p.2 > 0.0 {
                let (ty, by) = (py(p.1 + p.2), py(p.1 - p.2));
                write!(
                    s,
                    "<line x1=\"{cx}\" y1=\"{ty}\" x2=\"{cx}\" y2=\"{by}\" stroke=\"{color}\"/>\n\
                     <line x1=\"{0}\" y1=\"{ty}\" x2=\"{1}\" y2=\"{ty}\" stroke=\"{color}\"/>\n\
                     <line x1=\"{0}\" y1=\"{by}\" x2=\"{1}\" y2=\"{by}\" stroke=\"{color}\"/>\n",
                    cx - 4.0,
                    cx + 4.0
                )
                .unwrap();
            }
            write!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>\n").unwrap();
        }
        // Legend swatch.
        let ly = mt + 16.0 * si as f64;
        write!(
            s,
            "<rect x=\"{0}\" y=\"{1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{2}\" y=\"{3}\" font-size=\"12\">{name}</text>\n",
            w - mr - 130.0,
            ly,
            w - mr - 115.0,
            ly + 9.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_lines_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    cells: &[CellSummary],
    col: usize,
) -> Result<()> {
    std::fs::write(path, lines_svg(title, x_label, y_label, cells, col))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(v: f64) -> MetricReport {
        MetricReport {
            n_clips: 1,
            n_windows: 3,
            fvd_like: v,
            ia: v,
            it: v,
            relsync: 10.0 * v,
            alignsync: 10.0 * v,
            mean_sync_prob: v / 10.0,
            degenerate_count: 0,
        }
    }

    #[test]
    fn summary_stats_match_hand_arithmetic() {
        let mut cell = CellSummary::new("a", "s", 1.0);
        cell.reports = vec![report(1.0), report(3.0)];
        let (mean, sd) = cell.mean_sd();
        assert!((mean[0] - 2.0).abs() < 1e-12);
        // Sample sd of {1,3} is sqrt(2).
        assert!((sd[0] - 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((mean[3] - 20.0).abs() < 1e-12);

        let mut single = CellSummary::new("b", "s", 2.0);
        single.reports = vec![report(5.0)];
        assert_eq!(single.mean_sd().1, [0.0; 6]);
    }

    #[test]
    fn csv_has_one_row_per_cell_and_sd_columns_only_for_multi_seed() {
        let mut a = CellSummary::new("a", "s", 1.0);
        a.reports = vec![report(1.0)];
        let mut b = CellSummary::new("b", "s", 2.0);
        b.reports = vec![report(2.0)];
        let csv = summary_csv(&[a.clone(), b.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 3 + 6);

        a.reports.push(report(3.0));
        let csv = summary_csv(&[a, b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0].split(',').count(), 3 + 12);
        assert!(lines[0].ends_with("mean_sync_prob_sd"));
        assert!(lines[1].starts_with("a,1,2,"));
    }

    #[test]
    fn svg_renders_every_series_and_point() {
        let mut a = CellSummary::new("x1", "alpha", 1.0);
        a.reports = vec![report(1.0), report(2.0)];
        let mut b = CellSummary::new("x2", "alpha", 2.0);
        b.reports = vec![report(2.0), report(4.0)];
        let mut c = CellSummary::new("y1", "beta", 1.0);
        c.reports = vec![report(3.0)];
        let svg = lines_svg("t", "x", "y", &[a, b, c], 0);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("alpha") && svg.contains("beta"));
        // Error bars only on the multi-seed cells: 3 bare-stroke lines each.
        assert_eq!(svg.matches("stroke=\"#1f77b4\"/>").count(), 6);
    }
}
