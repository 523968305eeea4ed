//! Reference densities and the weighted sample-point cloud derived from them.
//!
//! A density is either an analytic Gaussian mixture or a piecewise-constant
//! grid. The sample cloud is drawn by seeded rejection sampling; priority is
//! carried by where points land, every point gets the same weight `1/N`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::compensated_sum;
use crate::{Error, Result};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let b = Bounds {
            xmin,
            xmax,
            ymin,
            ymax,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.xmax <= self.xmin || self.ymax <= self.ymin {
            return Err(Error::Validation(format!(
                "bounds must be finite with xmin < xmax and ymin < ymax, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn contains_bounds(&self, other: &Bounds) -> bool {
        other.xmin >= self.xmin
            && other.xmax <= self.xmax
            && other.ymin >= self.ymin
            && other.ymax <= self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Squared length of the diagonal.
    pub fn diameter_sq(&self) -> f64 {
        self.width().powi(2) + self.height().powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

impl GaussianComponent {
    fn cov_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[0][0], self.cov[0][1], self.cov[1][0], self.cov[1][1])
    }

    fn peak(&self) -> f64 {
        1.0 / (2.0 * PI * self.cov_matrix().determinant().sqrt())
    }

    fn pdf(&self, p: &Vector2<f64>) -> f64 {
        let cov = self.cov_matrix();
        let det = cov.determinant();
        let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
        let d = p - Vector2::new(self.mean[0], self.mean[1]);
        let m = d.dot(&(inv * d));
        (-0.5 * m).exp() / (2.0 * PI * det.sqrt())
    }
}

/// Row-major grid of nonnegative cell values. Row 0 is the strip nearest
/// `ymin`, column 0 the strip nearest `xmin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    GaussianMixture(Vec<GaussianComponent>),
    Grid(GridDensity),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpec {
    pub bounds: Bounds,
    pub kind: DensityKind,
}

impl DensitySpec {
    pub fn mixture(bounds: Bounds, components: Vec<GaussianComponent>) -> Result<Self> {
        let spec = DensitySpec {
            bounds,
            kind: DensityKind::GaussianMixture(components),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(bounds: Bounds, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let spec = DensitySpec {
            bounds,
            kind: DensityKind::Grid(GridDensity { rows, cols, values }),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        match &self.kind {
            DensityKind::GaussianMixture(comps) => {
                if comps.is_empty() {
                    return Err(Error::Validation("mixture has no components".into()));
                }
                for (i, c) in comps.iter().enumerate() {
                    if !(c.weight > 0.0) || !c.weight.is_finite() {
                        return Err(Error::Validation(format!(
                            "component {i}: mixing weight must be positive, got {}",
                            c.weight
                        )));
                    }
                    let cov = c.cov_matrix();
                    let symmetric = (cov[(0, 1)] - cov[(1, 0)]).abs()
                        <= 1e-12 * (1.0 + cov[(0, 1)].abs());
                    if !symmetric || !(cov[(0, 0)] > 0.0) || !(cov.determinant() > 0.0) {
                        return Err(Error::Validation(format!(
                            "component {i}: covariance must be symmetric positive definite"
                        )));
                    }
                    if !c.mean.iter().all(|v| v.is_finite()) {
                        return Err(Error::Validation(format!("component {i}: mean not finite")));
                    }
                }
                let total = compensated_sum(comps.iter().map(|c| c.weight));
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "mixing weights must sum to 1, got {total}"
                    )));
                }
            }
            DensityKind::Grid(g) => {
                if g.rows == 0 || g.cols == 0 {
                    return Err(Error::Validation("grid must have at least one cell".into()));
                }
                if g.values.len() != g.rows * g.cols {
                    return Err(Error::Validation(format!(
                        "grid expects {} values, got {}",
                        g.rows * g.cols,
                        g.values.len()
                    )));
                }
                if let Some(i) = g.values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "grid cell (row {}, col {}) is negative or not finite: {}",
                        i / g.cols,
                        i % g.cols,
                        g.values[i]
                    )));
                }
                if !g.values.iter().any(|v| *v > 0.0) {
                    return Err(Error::Validation("grid has no positive cell".into()));
                }
            }
        }
        Ok(())
    }

    /// Upper bound on the density over its bounds (exact for grids).
    fn upper_bound(&self) -> f64 {
        match &self.kind {
            DensityKind::GaussianMixture(comps) => comps.iter().map(|c| c.weight * c.peak()).sum(),
            DensityKind::Grid(g) => g.values.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Row and column of the cell containing `p` (grid densities only).
    pub fn grid_cell(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        let DensityKind::Grid(g) = &self.kind else {
            return None;
        };
        let b = &self.bounds;
        let col = (((p.x - b.xmin) / b.width()) * g.cols as f64).floor() as isize;
        let row = (((p.y - b.ymin) / b.height()) * g.rows as f64).floor() as isize;
        let col = col.clamp(0, g.cols as isize - 1) as usize;
        let row = row.clamp(0, g.rows as isize - 1) as usize;
        Some((row, col))
    }

    /// Center of grid cell `(row, col)`.
    pub fn cell_center(&self, rows: usize, cols: usize, row: usize, col: usize) -> Vector2<f64> {
        let b = &self.bounds;
        Vector2::new(
            b.xmin + (col as f64 + 0.5) * b.width() / cols as f64,
            b.ymin + (row as f64 + 0.5) * b.height() / rows as f64,
        )
    }
}

/// Density value at `point`. Mixtures are evaluated exactly, grids by
/// nearest-cell lookup.
pub fn evaluate_density(spec: &DensitySpec, point: &Vector2<f64>) -> Result<f64> {
    if !spec.bounds.contains(point) {
        return Err(Error::OutsideDomain {
            x: point.x,
            y: point.y,
        });
    }
    Ok(match &spec.kind {
        DensityKind::GaussianMixture(comps) => comps.iter().map(|c| c.weight * c.pdf(point)).sum(),
        DensityKind::Grid(g) => {
            let (row, col) = spec.grid_cell(point).expect("grid density");
            g.values[row * g.cols + col]
        }
    })
}

/// Weighted reference atoms `(q_j, β⁰_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePointCloud {
    pub positions: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
}

impl SamplePointCloud {
    pub fn new(positions: Vec<Vector2<f64>>, weights: Vec<f64>) -> Result<Self> {
        let cloud = SamplePointCloud { positions, weights };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Validation("sample cloud is empty".into()));
        }
        if self.positions.len() != self.weights.len() {
            return Err(Error::Dimension {
                what: "sample cloud weights",
                expected: self.positions.len(),
                got: self.weights.len(),
            });
        }
        if let Some(j) = self.weights.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Validation(format!(
                "sample {j} has nonpositive weight {}",
                self.weights[j]
            )));
        }
        let total = compensated_sum(self.weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "sample weights must sum to 1, got {total:.17}"
            )));
        }
        Ok(())
    }

    pub fn check_within(&self, bounds: &Bounds) -> Result<()> {
        match self.positions.iter().find(|p| !bounds.contains(p)) {
            Some(p) => Err(Error::OutsideDomain { x: p.x, y: p.y }),
            None => Ok(()),
        }
    }

    /// Writes the `x,y,weight` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "weight"])?;
        for (p, b) in self.positions.iter().zip(&self.weights) {
            w.write_record([format_float(p.x), format_float(p.y), format_float(*b)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let (positions, weights) = read_xyw_csv(path)?;
        Self::new(positions, weights)
    }
}

/// Reads an `x,y,weight` CSV without validating the weights.
pub fn read_xyw_csv(path: &Path) -> Result<(Vec<Vector2<f64>>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "weight"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("expected header x,y,weight, got {:?}", headers),
        });
    }
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                column: c + 1,
                message: "missing field".into(),
            })?;
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                column: c + 1,
                message: format!("{e}: {s:?}"),
            })
        };
        positions.push(Vector2::new(field(0)?, field(1)?));
        weights.push(field(2)?);
    }
    Ok((positions, weights))
}

/// Seeded rejection sampling of `n` points in `domain` against the density.
/// Every point gets weight `1/n`.
pub fn sample_points(
    spec: &DensitySpec,
    n: usize,
    seed: u64,
    domain: &Bounds,
) -> Result<SamplePointCloud> {
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    domain.validate()?;
    if !spec.bounds.contains_bounds(domain) {
        return Err(Error::Validation(
            "sampling domain must lie inside the density bounds".into(),
        ));
    }
    let fmax = spec.upper_bound();
    if !(fmax > 0.0) {
        return Err(Error::DegenerateDensity {
            rate: 0.0,
            trials: 0,
        });
    }

    const CHECK_EVERY: u64 = 1_000_000;
    const MIN_RATE: f64 = 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut trials: u64 = 0;
    while positions.len() < n {
        let p = Vector2::new(
            rng.gen_range(domain.xmin..domain.xmax),
            rng.gen_range(domain.ymin..domain.ymax),
        );
        let accept = rng.gen::<f64>() * fmax;
        trials += 1;
        if accept < evaluate_density(spec, &p)? {
            positions.push(p);
        }
        if trials.is_multiple_of(CHECK_EVERY) {
            let rate = positions.len() as f64 / trials as f64;
            if rate < MIN_RATE {
                return Err(Error::DegenerateDensity { rate, trials });
            }
        }
    }
    let w = 1.0 / n as f64;
    Ok(SamplePointCloud {
        positions,
        weights: vec![w; n],
    })
}

/// Loads the plain-text grid format: a header line
/// `rows cols xmin xmax ymin ymax` followed by `rows*cols` row-major values.
pub fn load_density_grid(path: &Path) -> Result<DensitySpec> {
    let text = fs::read_to_string(path)?;
    parse_density_grid(&text, path)
}

pub fn parse_density_grid(text: &str, path: &Path) -> Result<DensitySpec> {
    let perr = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| perr(1, 1, "empty grid file".into()))?;
    let htoks: Vec<&str> = header.split_whitespace().collect();
    if htoks.len() != 6 {
        return Err(perr(
            hline + 1,
            1,
            format!("header needs 6 fields (rows cols xmin xmax ymin ymax), got {}", htoks.len()),
        ));
    }
    let rows: usize = htoks[0]
        .parse()
        .map_err(|e| perr(hline + 1, 1, format!("rows: {e}")))?;
    let cols: usize = htoks[1]
        .parse()
        .map_err(|e| perr(hline + 1, 2, format!("cols: {e}")))?;
    let mut b = [0.0; 4];
    for (i, slot) in b.iter_mut().enumerate() {
        *slot = htoks[i + 2]
            .parse()
            .map_err(|e| perr(hline + 1, i + 3, format!("bound: {e}")))?;
    }
    let bounds = Bounds {
        xmin: b[0],
        xmax: b[1],
        ymin: b[2],
        ymax: b[3],
    };
    bounds
        .validate()
        .map_err(|e| perr(hline + 1, 3, e.to_string()))?;

    let expected = rows * cols;
    let mut values = Vec::with_capacity(expected);
    for (lno, line) in lines {
        for (cno, tok) in line.split_whitespace().enumerate() {
            let idx = values.len();
            if idx >= expected {
                return Err(perr(
                    lno + 1,
                    cno + 1,
                    format!("more than {expected} values"),
                ));
            }
            let v: f64 = tok.parse().map_err(|e| {
                perr(
                    lno + 1,
                    cno + 1,
                    format!("cell (row {}, col {}): {e}: {tok:?}", idx / cols, idx % cols),
                )
            })?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "line {}, column {}: cell (row {}, col {}) is negative or not finite: {v}",
                    lno + 1,
                    cno + 1,
                    idx / cols,
                    idx % cols
                )));
            }
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(perr(
            text.lines().count().max(1),
            1,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    DensitySpec::grid(bounds, rows, cols, values)
}

/// Writes a grid density in the format read by [`load_density_grid`].
pub fn write_density_grid<W: Write>(spec: &DensitySpec, mut out: W) -> Result<()> {
    let DensityKind::Grid(g) = &spec.kind else {
        return Err(Error::Contract("only grid densities can be written".into()));
    };
    let b = &spec.bounds;
    writeln!(
        out,
        "{} {} {} {} {} {}",
        g.rows,
        g.cols,
        format_float(b.xmin),
        format_float(b.xmax),
        format_float(b.ymin),
        format_float(b.ymax)
    )?;
    for row in g.values.chunks(g.cols) {
        let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Rasterizes any density onto a `rows x cols` grid by sampling cell centers.
pub fn rasterize(spec: &DensitySpec, rows: usize, cols: usize) -> Result<DensitySpec> {
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = spec.cell_center(rows, cols, r, c);
            values.push(evaluate_density(spec, &p)?);
        }
    }
    DensitySpec::grid(spec.bounds, rows, cols, values)
}

/// Float formatting used by every emitted file: 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}
