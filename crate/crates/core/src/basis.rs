//! Gaussian radial basis functions, knot placement and point-to-area change of support.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Coord = [f64; 2];

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Coord,
    pub max: Coord,
}

impl BoundingBox {
    pub const UNIT: BoundingBox = BoundingBox {
        min: [0.0, 0.0],
        max: [1.0, 1.0],
    };

    pub fn new(min: Coord, max: Coord) -> Result<Self> {
        for axis in 0..2 {
            if !(max[axis] > min[axis]) || !min[axis].is_finite() || !max[axis].is_finite() {
                return Err(Error::domain(
                    format!("domain.max[{axis}]"),
                    max[axis],
                    "bounding box must be non-degenerate",
                ));
            }
        }
        Ok(BoundingBox { min, max })
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: Coord) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }
}

/// Centers and common bandwidth of a family of Gaussian RBFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    centers: Vec<Coord>,
    bandwidth: f64,
}

impl KnotSet {
    pub fn new(centers: Vec<Coord>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::domain("r", 0.0, "need at least one knot"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::domain("bandwidth", bandwidth, "must be positive"));
        }
        Ok(KnotSet { centers, bandwidth })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Coord] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::domain("bandwidth", bandwidth, "must be positive"));
        }
        self.bandwidth = bandwidth;
        Ok(self)
    }

    /// Smallest distance between two distinct knots, `None` for a single knot.
    pub fn min_spacing(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                best = Some(best.map_or(d, |m: f64| m.min(d)));
            }
        }
        best
    }

    /// Writes `exp(−‖s − c_j‖² / 2b²)` for every knot into `out`.
    pub fn eval_into(&self, s: Coord, out: &mut [f64]) {
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        for (o, c) in out.iter_mut().zip(&self.centers) {
            let dx = s[0] - c[0];
            let dy = s[1] - c[1];
            *o = (scale * (dx * dx + dy * dy)).exp();
        }
    }

    pub fn eval(&self, s: Coord) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(s, &mut out);
        out
    }
}

/// Regular lattice of `⌈√r⌉ × ⌈√r⌉` cell-centred points over `domain`, truncated
/// to the first `r` in row-major order. Bandwidth defaults to 1.5× the
/// smallest inter-knot distance (the lattice spacing when `r = 1`).
pub fn select_knots(domain: &BoundingBox, r: usize) -> Result<KnotSet> {
    if r == 0 {
        return Err(Error::domain("r", 0.0, "need at least one knot"));
    }
    let side = (r as f64).sqrt().ceil() as usize;
    let side = if side * side < r { side + 1 } else { side };
    let sx = domain.width() / side as f64;
    let sy = domain.height() / side as f64;
    let centers: Vec<Coord> = (0..side)
        .flat_map(|i| (0..side).map(move |j| (i, j)))
        .take(r)
        .map(|(i, j)| {
            [
                domain.min[0] + (i as f64 + 0.5) * sx,
                domain.min[1] + (j as f64 + 0.5) * sy,
            ]
        })
        .collect();
    let knots = KnotSet::new(centers, 1.0)?;
    let spacing = knots.min_spacing().unwrap_or(sx.min(sy));
    knots.with_bandwidth(1.5 * spacing)
}

/// Fine rectangular grid of equal cells used to represent areal regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub nx: usize,
    pub ny: usize,
    pub domain: BoundingBox,
}

impl CellGrid {
    pub fn new(nx: usize, ny: usize, domain: BoundingBox) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::domain(
                "grid",
                0.0,
                "grid needs at least one cell per axis",
            ));
        }
        Ok(CellGrid { nx, ny, domain })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.domain.width() * self.domain.height() / self.n_cells() as f64
    }

    /// Cell index `ix + nx · iy`.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix + self.nx * iy
    }

    pub fn cell_coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn center(&self, idx: usize) -> Option<Coord> {
        if idx >= self.n_cells() {
            return None;
        }
        let (ix, iy) = self.cell_coords(idx);
        Some([
            self.domain.min[0] + (ix as f64 + 0.5) * self.domain.width() / self.nx as f64,
            self.domain.min[1] + (iy as f64 + 0.5) * self.domain.height() / self.ny as f64,
        ])
    }
}

/// A region made of fine-grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArealRegion {
    pub id: String,
    pub cells: Vec<usize>,
    pub cell_area: f64,
}

impl ArealRegion {
    pub fn area(&self) -> f64 {
        self.cells.len() as f64 * self.cell_area
    }
}

/// Checks that `regions` are non-empty, pairwise disjoint and reference valid cells.
/// With `require_cover`, they must also cover every cell of `grid`.
pub fn validate_partition(
    regions: &[ArealRegion],
    grid: &CellGrid,
    require_cover: bool,
) -> Result<()> {
    let mut owner = vec![usize::MAX; grid.n_cells()];
    for (k, reg) in regions.iter().enumerate() {
        if reg.cells.is_empty() {
            return Err(Error::data(
                format!("region {}", reg.id),
                "region has no cells",
            ));
        }
        for &c in &reg.cells {
            if c >= grid.n_cells() {
                return Err(Error::data(
                    format!("region {}", reg.id),
                    format!("cell {c} outside grid"),
                ));
            }
            if owner[c] != usize::MAX {
                return Err(Error::data(
                    format!("region {}", reg.id),
                    format!(
                        "cell {c} already belongs to region {}",
                        regions[owner[c]].id
                    ),
                ));
            }
            owner[c] = k;
        }
    }
    if require_cover {
        if let Some(c) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::data(
                format!("cell {c}"),
                "regions do not cover the grid",
            ));
        }
    }
    Ok(())
}

/// Midpoint-rule approximation of `(1/|A|) ∫_A g(s) ds`: the mean of the basis
/// vector over the region's cell centres.
pub fn cos_average(region: &ArealRegion, knots: &KnotSet, grid: &CellGrid) -> Result<Vec<f64>> {
    if region.cells.is_empty() {
        return Err(Error::domain(
            format!("region {}", region.id),
            0.0,
            "empty region",
        ));
    }
    let mut acc = vec![0.0; knots.len()];
    let mut buf = vec![0.0; knots.len()];
    for &c in &region.cells {
        let s = grid.center(c).ok_or_else(|| {
            Error::data(
                format!("region {}", region.id),
                format!("cell {c} outside grid"),
            )
        })?;
        knots.eval_into(s, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let inv = 1.0 / region.cells.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// The three basis families. Responses 1 and 2 share `shared`; response 3 uses
/// the (typically coarser) `indicator` set. Each block of the basis matrix has
/// `r = shared.len()` columns; `indicator` is zero-padded when smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub shared: KnotSet,
    pub indicator: KnotSet,
}

impl BasisSet {
    pub fn new(shared: KnotSet, indicator: KnotSet) -> Result<Self> {
        if indicator.len() > shared.len() {
            return Err(Error::dimension(
                "indicator basis (r3 <= r)",
                shared.len(),
                indicator.len(),
            ));
        }
        Ok(BasisSet { shared, indicator })
    }

    pub fn r(&self) -> usize {
        self.shared.len()
    }

    /// Basis row for response 3 padded to `r` entries.
    pub fn eval_indicator(&self, s: Coord) -> Vec<f64> {
        let mut out = vec![0.0; self.r()];
        self.indicator
            .eval_into(s, &mut out[..self.indicator.len()]);
        out
    }
}

/// Assembles the `n × 3r` basis matrix with block rows
/// `[G₁ G₁ 0]`, `[G₂ 0 G₂]`, `[G₃ 0 0]`.
pub fn build_g(
    points1: &[Coord],
    regions: &[ArealRegion],
    points3: &[Coord],
    basis: &BasisSet,
    grid: &CellGrid,
) -> Result<DMatrix<f64>> {
    let r = basis.r();
    let n1s = points1.len();
    let n2 = regions.len();
    let n1 = points3.len();
    let n = n1s + n2 + n1;
    let mut g = DMatrix::<f64>::zeros(n, 3 * r);
    let mut row = vec![0.0; r];
    for (i, &s) in points1.iter().enumerate() {
        basis.shared.eval_into(s, &mut row);
        for j in 0..r {
            g[(i, j)] = row[j];
            g[(i, r + j)] = row[j];
        }
    }
    for (k, reg) in regions.iter().enumerate() {
        let a = cos_average(reg, &basis.shared, grid).map_err(|e| e.at("G2 region", k))?;
        let i = n1s + k;
        for j in 0..r {
            g[(i, j)] = a[j];
            g[(i, 2 * r + j)] = a[j];
        }
    }
    for (k, &s) in points3.iter().enumerate() {
        let v = basis.eval_indicator(s);
        let i = n1s + n2 + k;
        for j in 0..r {
            g[(i, j)] = v[j];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_grid(n: usize) -> CellGrid {
        CellGrid::new(n, n, BoundingBox::UNIT).unwrap()
    }

    #[test]
    fn two_by_two_lattice() {
        let k = select_knots(&BoundingBox::UNIT, 4).unwrap();
        let mut c = k.centers().to_vec();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            c,
            vec![[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]]
        );
        assert_relative_eq!(k.bandwidth(), 0.75);
    }

    #[test]
    fn single_knot_in_the_middle() {
        let k = select_knots(&BoundingBox::UNIT, 1).unwrap();
        assert_eq!(k.centers(), &[[0.5, 0.5]]);
        assert!(select_knots(&BoundingBox::UNIT, 0).is_err());
    }

    #[test]
    fn fifty_knots_are_well_spread() {
        let k = select_knots(&BoundingBox::UNIT, 50).unwrap();
        assert_eq!(k.len(), 50);
        let lattice = 1.0 / 8.0;
        // brute-force pairwise scan
        let c = k.centers();
        for i in 0..c.len() {
            assert!(BoundingBox::UNIT.contains(c[i]));
            for j in i + 1..c.len() {
                let d = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
                assert!(d >= 0.8 * lattice - 1e-15);
            }
        }
    }

    #[test]
    fn rbf_values() {
        let k = KnotSet::new(vec![[0.3, 0.4], [0.9, 0.1]], 0.2).unwrap();
        assert_eq!(k.eval([0.3, 0.4])[0], 1.0);
        let d = 0.2 * (2.0 * 2f64.ln()).sqrt();
        assert_relative_eq!(k.eval([0.3 + d, 0.4])[0], 0.5, epsilon = 1e-15);
        for v in k.eval([5.0, -3.0]) {
            assert!(v >= 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn rbf_matches_naive_loop() {
        let k = select_knots(&BoundingBox::UNIT, 9).unwrap();
        let s = [0.123, 0.876];
        let got = k.eval(s);
        for (j, c) in k.centers().iter().enumerate() {
            let mut d2 = 0.0;
            for a in 0..2 {
                d2 += (s[a] - c[a]) * (s[a] - c[a]);
            }
            let want = (-d2 / (2.0 * k.bandwidth() * k.bandwidth())).exp();
            assert!((got[j] - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn cos_of_constant_and_single_cell() {
        let grid = unit_grid(10);
        let knots = KnotSet::new(vec![[0.5, 0.5]], 1e6).unwrap();
        let reg = ArealRegion {
            id: "a".into(),
            cells: vec![0, 1, 2, 55, 99],
            cell_area: grid.cell_area(),
        };
        assert_relative_eq!(
            cos_average(&reg, &knots, &grid).unwrap()[0],
            1.0,
            epsilon = 1e-9
        );

        let knots = select_knots(&BoundingBox::UNIT, 4).unwrap();
        let single = ArealRegion {
            id: "b".into(),
            cells: vec![37],
            cell_area: grid.cell_area(),
        };
        assert_eq!(
            cos_average(&single, &knots, &grid).unwrap(),
            knots.eval(grid.center(37).unwrap())
        );

        let empty = ArealRegion {
            id: "c".into(),
            cells: vec![],
            cell_area: grid.cell_area(),
        };
        assert!(matches!(
            cos_average(&empty, &knots, &grid),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn partition_validation() {
        let grid = unit_grid(2);
        let a = |id: &str, cells: Vec<usize>| ArealRegion {
            id: id.into(),
            cells,
            cell_area: 0.25,
        };
        assert!(validate_partition(&[a("x", vec![0, 1]), a("y", vec![2, 3])], &grid, true).is_ok());
        assert!(
            validate_partition(&[a("x", vec![0, 1]), a("y", vec![1, 3])], &grid, false).is_err()
        );
        assert!(validate_partition(&[a("x", vec![0, 1]), a("y", vec![3])], &grid, true).is_err());
        assert!(validate_partition(&[a("x", vec![0, 1]), a("y", vec![3])], &grid, false).is_ok());
    }

    #[test]
    fn three_by_three_block_readout() {
        let grid = unit_grid(4);
        let knots = KnotSet::new(vec![[0.5, 0.5]], 0.3).unwrap();
        let basis = BasisSet::new(knots.clone(), knots.clone()).unwrap();
        let p1 = [0.2, 0.3];
        let p3 = [0.7, 0.6];
        let reg = ArealRegion {
            id: "r".into(),
            cells: vec![0, 5],
            cell_area: grid.cell_area(),
        };
        let g = build_g(&[p1], &[reg.clone()], &[p3], &basis, &grid).unwrap();
        let g1 = knots.eval(p1)[0];
        let g2 = cos_average(&reg, &knots, &grid).unwrap()[0];
        let g3 = knots.eval(p3)[0];
        let want = DMatrix::from_row_slice(3, 3, &[g1, g1, 0.0, g2, 0.0, g2, g3, 0.0, 0.0]);
        assert_eq!(g, want);
    }

    #[test]
    fn indicator_basis_is_zero_padded() {
        let shared = select_knots(&BoundingBox::UNIT, 9).unwrap();
        let coarse = select_knots(&BoundingBox::UNIT, 4).unwrap();
        let basis = BasisSet::new(shared, coarse).unwrap();
        let v = basis.eval_indicator([0.1, 0.1]);
        assert_eq!(v.len(), 9);
        assert!(v[..4].iter().all(|&x| x > 0.0));
        assert!(v[4..].iter().all(|&x| x == 0.0));
        assert!(BasisSet::new(
            select_knots(&BoundingBox::UNIT, 2).unwrap(),
            select_knots(&BoundingBox::UNIT, 3).unwrap()
        )
        .is_err());
    }
}
