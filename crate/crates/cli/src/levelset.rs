//! Level-set extraction for a value function over a 2-D state slice:
//! regular-grid sampling, marching-squares contours, and the SVG rendering.
//!
//! Contours are emitted as per-cell line segments with linear interpolation
//! along cell edges; endpoints therefore sit within one grid-cell Lipschitz
//! bound of the requested level (checked against analytic shapes in the
//! tests). Saddle cells are disambiguated by the cell-center average.

use crate::svg::{Frame, SvgDoc};
use crate::CliError;

/// Scalar samples on a regular grid: `values[j][i]` is the sample at
/// `(xs[i], ys[j])`.
#[derive(Debug)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Grid {
    pub fn min(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sample `f` on a `resolution × resolution` grid over `bounds` (applied to
/// both axes). Needs at least 3 points per axis to support contour cells.
pub fn sample_grid(
    bounds: (f64, f64),
    resolution: usize,
    mut f: impl FnMut(f64, f64) -> Result<f64, CliError>,
) -> Result<Grid, CliError> {
    let (lo, hi) = bounds;
    if resolution < 3 {
        return Err(CliError::Usage(format!(
            "grid resolution must be at least 3, got {resolution}"
        )));
    }
    if !(hi > lo) {
        return Err(CliError::Usage(format!(
            "grid bounds must satisfy low < high, got {lo}..{hi}"
        )));
    }
    let coord = |k: usize| lo + (hi - lo) * k as f64 / (resolution - 1) as f64;
    let xs: Vec<f64> = (0..resolution).map(coord).collect();
    let ys = xs.clone();
    let mut values = Vec::with_capacity(resolution);
    for &y in &ys {
        let mut row = Vec::with_capacity(resolution);
        for &x in &xs {
            let v = f(x, y)?;
            if !v.is_finite() {
                return Err(CliError::Numeric(format!(
                    "non-finite value sampled at ({x}, {y})"
                )));
            }
            row.push(v);
        }
        values.push(row);
    }
    Ok(Grid { xs, ys, values })
}

/// `levels` values evenly spaced strictly inside the grid's value range.
pub fn even_levels(grid: &Grid, levels: usize) -> Result<Vec<f64>, CliError> {
    let (lo, hi) = (grid.min(), grid.max());
    if !(hi > lo) {
        return Err(CliError::Usage(
            "cannot contour a constant field".to_string(),
        ));
    }
    Ok((1..=levels)
        .map(|i| lo + (hi - lo) * i as f64 / (levels + 1) as f64)
        .collect())
}

/// Marching squares: line segments of the `v = level` contour.
pub fn marching_squares(grid: &Grid, level: f64) -> Vec<[(f64, f64); 2]> {
    let mut segments = Vec::new();
    let (nx, ny) = (grid.xs.len(), grid.ys.len());
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (x0, x1) = (grid.xs[i], grid.xs[i + 1]);
            let (y0, y1) = (grid.ys[j], grid.ys[j + 1]);
            let v00 = grid.values[j][i];
            let v10 = grid.values[j][i + 1];
            let v11 = grid.values[j + 1][i + 1];
            let v01 = grid.values[j + 1][i];

            let mut case = 0u8;
            for (bit, v) in [(1, v00), (2, v10), (4, v11), (8, v01)] {
                if v >= level {
                    case |= bit;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }

            // Crossing point on each cell edge (valid only when referenced;
            // referenced edges always join an inside corner to an outside
            // one, so the interpolation denominator is nonzero).
            let lerp = |a: f64, b: f64, va: f64, vb: f64| a + (level - va) / (vb - va) * (b - a);
            let bottom = (lerp(x0, x1, v00, v10), y0);
            let right = (x1, lerp(y0, y1, v10, v11));
            let top = (lerp(x0, x1, v01, v11), y1);
            let left = (x0, lerp(y0, y1, v00, v01));

            let mut emit = |a: (f64, f64), b: (f64, f64)| segments.push([a, b]);
            match case {
                1 => emit(left, bottom),
                2 => emit(bottom, right),
                3 => emit(left, right),
                4 => emit(right, top),
                6 => emit(bottom, top),
                7 => emit(left, top),
                8 => emit(left, top),
                9 => emit(bottom, top),
                11 => emit(right, top),
                12 => emit(left, right),
                13 => emit(bottom, right),
                14 => emit(left, bottom),
                5 | 10 => {
                    // Saddle: pair the crossings so the contour stays
                    // consistent with the cell-center sample. Case 5 holds
                    // the bottom-left/top-right corners, case 10 the other
                    // diagonal; when the center agrees with the held
                    // diagonal the arcs hug the bottom-right and top-left
                    // corners, otherwise the other two.
                    let center_inside = (v00 + v10 + v11 + v01) / 4.0 >= level;
                    if (case == 5) == center_inside {
                        emit(bottom, right);
                        emit(left, top);
                    } else {
                        emit(left, bottom);
                        emit(right, top);
                    }
                }
                _ => unreachable!("cases 0 and 15 are filtered above"),
            }
        }
    }
    segments
}

/// Long-form CSV of the sampled grid (`x1,x2,v`, row-major in `x2`).
pub fn grid_csv(grid: &Grid) -> String {
    let mut rows = Vec::with_capacity(grid.xs.len() * grid.ys.len());
    for (j, &y) in grid.ys.iter().enumerate() {
        for (i, &x) in grid.xs.iter().enumerate() {
            rows.push(vec![
                crate::artifacts::fmt_f64(x),
                crate::artifacts::fmt_f64(y),
                crate::artifacts::fmt_f64(grid.values[j][i]),
            ]);
        }
    }
    crate::artifacts::csv_document(&["x1", "x2", "v"], &rows)
}

/// Interpolate two hex colors (used to shade contour levels low → high).
fn shade(f: f64) -> String {
    let lo = (0x9e, 0xc2, 0xe0);
    let hi = (0x08, 0x30, 0x6b);
    let mix = |a: i32, b: i32| (a + ((b - a) as f64 * f) as i32).clamp(0, 255);
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(lo.0, hi.0),
        mix(lo.1, hi.1),
        mix(lo.2, hi.2)
    )
}

/// Render contours at the given levels plus optional trajectory overlays
/// (point lists in the same slice coordinates).
pub fn levelset_svg(
    grid: &Grid,
    levels: &[f64],
    overlays: &[Vec<(f64, f64)>],
    title: &str,
    axis_labels: (&str, &str),
) -> String {
    let (w, h) = (520.0, 520.0);
    let mut doc = SvgDoc::new(w, h);
    let frame = Frame::new(
        (grid.xs[0], *grid.xs.last().unwrap()),
        (grid.ys[0], *grid.ys.last().unwrap()),
        w,
        h,
    );
    frame.draw_axes(&mut doc, title, axis_labels.0, axis_labels.1);
    for (li, &level) in levels.iter().enumerate() {
        let f = if levels.len() > 1 {
            li as f64 / (levels.len() - 1) as f64
        } else {
            1.0
        };
        let color = shade(f);
        for seg in marching_squares(grid, level) {
            doc.line(
                frame.map(seg[0].0, seg[0].1),
                frame.map(seg[1].0, seg[1].1),
                &color,
                1.2,
            );
        }
    }
    for path in overlays {
        let pts: Vec<(f64, f64)> = path.iter().map(|&(x, y)| frame.map(x, y)).collect();
        doc.polyline(&pts, "#d06020", 1.3);
    }
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Largest `|v − level|` over all segment endpoints for an analytic `v`.
    fn worst_level_error(
        grid: &Grid,
        level: f64,
        v: impl Fn(f64, f64) -> f64,
    ) -> (f64, usize) {
        let segs = marching_squares(grid, level);
        let mut worst = 0.0f64;
        for seg in &segs {
            for p in seg {
                worst = worst.max((v(p.0, p.1) - level).abs());
            }
        }
        (worst, segs.len())
    }

    #[test]
    fn quadratic_contours_track_the_level_within_the_cell_bound() {
        let v = |x: f64, y: f64| x * x + 2.0 * y * y;
        let grid = sample_grid((-2.0, 2.0), 81, |x, y| Ok(v(x, y))).unwrap();
        let h = grid.xs[1] - grid.xs[0];
        // Lipschitz constant of v on the domain: ‖∇v‖ ≤ √(4·4 + 16·4).
        let lipschitz = (16.0f64 + 64.0).sqrt();
        for level in [0.5, 1.0, 2.0, 4.0] {
            let (worst, count) = worst_level_error(&grid, level, v);
            assert!(count > 0, "no segments found at level {level}");
            assert!(
                worst <= lipschitz * h,
                "level {level}: worst error {worst} exceeds {}",
                lipschitz * h
            );
        }
    }

    #[test]
    fn ellipse_contours_close_up() {
        // Every contour of an ellipse that fits inside the domain is a
        // closed curve: each crossing point is shared by exactly two
        // segments (endpoints pair up).
        let grid = sample_grid((-2.0, 2.0), 41, |x, y| Ok(x * x + 2.0 * y * y)).unwrap();
        let segs = marching_squares(&grid, 1.0);
        let mut counts = std::collections::HashMap::new();
        for seg in &segs {
            for p in seg {
                let key = (format!("{:.9}", p.0), format!("{:.9}", p.1));
                *counts.entry(key).or_insert(0usize) += 1;
            }
        }
        assert!(!segs.is_empty());
        for (key, n) in counts {
            assert_eq!(n, 2, "crossing {key:?} appears {n} times, expected 2");
        }
    }

    #[test]
    fn zero_parameter_convex_net_contours_are_circles() {
        use hjb_core::nets::{ValueFunction, ValueNetwork};
        let epsilon = 0.1;
        let mut net = ValueNetwork::icnn_pd(&[3, 4, 4, 1], epsilon).unwrap();
        net.set_params(&vec![0.0; net.params().len()]).unwrap();
        // With all parameters zero the centered core vanishes identically,
        // leaving v = ε‖x‖²; the level-c contour is the circle of radius
        // √(c/ε).
        let grid =
            sample_grid((-2.0, 2.0), 81, |x, y| Ok(net.forward(&[x, y], 0.0).unwrap())).unwrap();
        let level = 0.2;
        let radius = (level / epsilon).sqrt();
        let h = grid.xs[1] - grid.xs[0];
        let segs = marching_squares(&grid, level);
        assert!(!segs.is_empty());
        for seg in segs {
            for p in seg {
                let r = (p.0 * p.0 + p.1 * p.1).sqrt();
                assert!(
                    (r - radius).abs() <= h,
                    "point at radius {r}, expected {radius} ± {h}"
                );
            }
        }
    }

    #[test]
    fn tiny_grids_are_rejected() {
        let err = sample_grid((-1.0, 1.0), 2, |_, _| Ok(0.0)).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err:?}");
    }

    #[test]
    fn constant_fields_cannot_be_contoured() {
        let grid = sample_grid((-1.0, 1.0), 5, |_, _| Ok(1.0)).unwrap();
        assert!(even_levels(&grid, 3).is_err());
        assert!(marching_squares(&grid, 0.5).is_empty());
    }

    #[test]
    fn saddle_cells_emit_two_segments() {
        // A 3×3 grid with an exact saddle in the middle cell block: corners
        // high on one diagonal, low on the other.
        let grid = Grid {
            xs: vec![0.0, 1.0],
            ys: vec![0.0, 1.0],
            values: vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
        };
        let segs = marching_squares(&grid, 0.0);
        assert_eq!(segs.len(), 2);
    }
}
