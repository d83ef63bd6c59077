//! Staggered grid geometry, field storage, and velocity boundary conditions.
//!
//! All nodal quantities share the array shape `(ny + 1) x (nx + 1)` so that
//! stencil kernels and marker interpolation never branch on the quantity kind.
//! Basic nodes sit at the grid-line intersections `(x_j, y_i)`; the staggered
//! quantities share the index of the basic node to their lower-right:
//!
//! * `vx(i, j)` at `(x_j,         y_i - dy/2)` - vertical cell faces,
//! * `vy(i, j)` at `(x_j - dx/2,  y_i)`        - horizontal cell faces,
//! * `p (i, j)` at `(x_j - dx/2,  y_i - dy/2)` - cell centers.
//!
//! Physical basic nodes occupy indices `0..=nx-1` / `0..=ny-1`; the final row
//! and column are east/south padding. For `vx` the padded row `ny` doubles as
//! the south tangential mirror, for `vy` the padded column `nx` is the east
//! mirror, and the remaining padded entries carry no physical meaning. The
//! simulated domain therefore spans `[x_0, x_{nx-1}] x [y_0, y_{ny-1}]`, and
//! the y axis points downward (row 0 is the top boundary).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2;

/// Uniform rectilinear staggered grid.
#[derive(Clone, Debug)]
pub struct GridGeometry2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub xsize: f64,
    pub ysize: f64,
    /// Basic-node x coordinates, length `nx + 1`.
    pub x: Vec<f64>,
    /// Basic-node y coordinates, length `ny + 1`.
    pub y: Vec<f64>,
}

/// Which staggered sub-grid a nodal array lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StaggerRole {
    Basic,
    Vx,
    Vy,
    Pressure,
}

impl StaggerRole {
    pub fn name(self) -> &'static str {
        match self {
            StaggerRole::Basic => "basic",
            StaggerRole::Vx => "vx",
            StaggerRole::Vy => "vy",
            StaggerRole::Pressure => "pressure",
        }
    }
}

pub fn make_uniform_grid(nx: usize, ny: usize, xsize: f64, ysize: f64) -> Result<GridGeometry2D> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid_arg(format!(
            "cell counts must be >= 2, got nx={nx}, ny={ny}"
        )));
    }
    if !(xsize > 0.0) || !(ysize > 0.0) {
        return Err(Error::invalid_arg(format!(
            "domain extents must be positive, got xsize={xsize}, ysize={ysize}"
        )));
    }
    let dx = xsize / nx as f64;
    let dy = ysize / ny as f64;
    let x: Vec<f64> = (0..=nx).map(|j| j as f64 * dx).collect();
    let y: Vec<f64> = (0..=ny).map(|i| i as f64 * dy).collect();
    Ok(GridGeometry2D {
        nx,
        ny,
        dx,
        dy,
        xsize,
        ysize,
        x,
        y,
    })
}

impl GridGeometry2D {
    /// Array shape shared by every nodal quantity.
    pub fn shape(&self) -> (usize, usize) {
        (self.ny + 1, self.nx + 1)
    }

    pub fn alloc(&self) -> Field2 {
        Field2::zeros(self.ny + 1, self.nx + 1)
    }

    /// Index of the east wall column for `vx` (and last physical basic column).
    pub fn east_wall(&self) -> usize {
        self.nx - 1
    }

    /// Index of the south wall row for `vy` (and last physical basic row).
    pub fn south_wall(&self) -> usize {
        self.ny - 1
    }

    /// Extent of the simulated domain in x: `x[nx-1] - x[0]`.
    pub fn domain_width(&self) -> f64 {
        self.x[self.nx - 1] - self.x[0]
    }

    pub fn domain_height(&self) -> f64 {
        self.y[self.ny - 1] - self.y[0]
    }

    /// Interior (unknown) index ranges for the x-momentum equation:
    /// rows `1..=ny-1`, columns `1..=nx-2`.
    pub fn vx_interior(&self) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
        (1..=self.ny - 1, 1..=self.nx - 2)
    }

    /// Interior (unknown) index ranges for the y-momentum equation:
    /// rows `1..=ny-2`, columns `1..=nx-1`.
    pub fn vy_interior(&self) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
        (1..=self.ny - 2, 1..=self.nx - 1)
    }

    /// Interior pressure-cell index ranges: rows `1..=ny-1`, columns `1..=nx-1`.
    pub fn p_interior(&self) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
        (1..=self.ny - 1, 1..=self.nx - 1)
    }

    /// Coordinate vector along x for the given stagger role (length `nx + 1`).
    pub fn x_coords(&self, role: StaggerRole) -> Vec<f64> {
        let half = self.dx * 0.5;
        match role {
            StaggerRole::Basic | StaggerRole::Vx => self.x.clone(),
            StaggerRole::Vy | StaggerRole::Pressure => self.x.iter().map(|v| v - half).collect(),
        }
    }

    /// Coordinate vector along y for the given stagger role (length `ny + 1`).
    pub fn y_coords(&self, role: StaggerRole) -> Vec<f64> {
        let half = self.dy * 0.5;
        match role {
            StaggerRole::Basic | StaggerRole::Vy => self.y.clone(),
            StaggerRole::Vx | StaggerRole::Pressure => self.y.iter().map(|v| v - half).collect(),
        }
    }

    /// True when `(x, y)` lies in the simulated domain. Half-open at the east
    /// and south walls, matching the marker-ownership convention.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x[0]
            && x < self.x[self.nx - 1]
            && y >= self.y[0]
            && y < self.y[self.ny - 1]
    }
}

/// Nodal storage for one Stokes problem.
#[derive(Clone, Debug)]
pub struct FieldSet {
    pub vx: Field2,
    pub vy: Field2,
    pub p: Field2,
    /// Viscosity at basic nodes (shear-stress locations), Pa*s.
    pub etab: Field2,
    /// Viscosity at pressure nodes (normal-stress locations), Pa*s.
    pub etap: Field2,
    /// Density at basic nodes, kg/m^3.
    pub rho: Field2,
}

impl FieldSet {
    pub fn new(geom: &GridGeometry2D) -> Self {
        FieldSet {
            vx: geom.alloc(),
            vy: geom.alloc(),
            p: geom.alloc(),
            etab: geom.alloc(),
            etap: geom.alloc(),
            rho: geom.alloc(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcKind {
    NoSlip,
    FreeSlip,
    Periodic,
}

/// Per-side, per-component boundary tags.
///
/// A component normal to a side (vx on west/east, vy on north/south) is pinned
/// to zero on the wall for both no-slip and free-slip; a tangential component
/// is mirrored with a sign flip (no-slip) or copied (free-slip) so the wall
/// value averages to the intended condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcSpec {
    pub west_vx: BcKind,
    pub west_vy: BcKind,
    pub east_vx: BcKind,
    pub east_vy: BcKind,
    pub north_vx: BcKind,
    pub north_vy: BcKind,
    pub south_vx: BcKind,
    pub south_vy: BcKind,
}

impl BcSpec {
    pub fn uniform(kind: BcKind) -> Self {
        BcSpec {
            west_vx: kind,
            west_vy: kind,
            east_vx: kind,
            east_vy: kind,
            north_vx: kind,
            north_vy: kind,
            south_vx: kind,
            south_vy: kind,
        }
    }

    /// Free-slip walls everywhere: zero normal velocity, zero tangential shear.
    pub fn free_slip() -> Self {
        Self::uniform(BcKind::FreeSlip)
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("west/east vx", self.west_vx, self.east_vx),
            ("west/east vy", self.west_vy, self.east_vy),
            ("north/south vx", self.north_vx, self.south_vx),
            ("north/south vy", self.north_vy, self.south_vy),
        ];
        for (name, a, b) in pairs {
            if (a == BcKind::Periodic) != (b == BcKind::Periodic) {
                return Err(Error::invalid_arg(format!(
                    "periodic tags must be paired on opposite sides ({name})"
                )));
            }
        }
        Ok(())
    }

    pub fn periodic_x(&self) -> bool {
        self.west_vx == BcKind::Periodic
    }

    pub fn periodic_y(&self) -> bool {
        self.north_vy == BcKind::Periodic
    }
}

/// Overwrites boundary rows/columns of `vx`/`vy` per the boundary tags.
///
/// Idempotent: applying twice leaves the fields unchanged. Pure padding
/// entries (vx column `nx` and vy row `ny` under non-periodic tags) are never
/// touched or read.
pub fn apply_velocity_bc(
    vx: &mut Field2,
    vy: &mut Field2,
    bc: &BcSpec,
    geom: &GridGeometry2D,
) -> Result<()> {
    bc.validate()?;
    let (nx, ny) = (geom.nx, geom.ny);
    let rows = ny + 1;
    let cols = nx + 1;

    // vx along x: normal component. Walls at columns 0 and nx-1.
    match bc.west_vx {
        BcKind::Periodic => {
            for i in 0..rows {
                vx[(i, 0)] = vx[(i, nx - 1)];
                vx[(i, nx)] = vx[(i, 1)];
            }
        }
        _ => {
            for i in 0..rows {
                vx[(i, 0)] = 0.0;
                vx[(i, nx - 1)] = 0.0;
            }
        }
    }

    // vx along y: tangential component. Mirror rows 0 and ny.
    match bc.north_vx {
        BcKind::Periodic => {
            for j in 0..cols {
                vx[(0, j)] = vx[(ny - 1, j)];
                vx[(ny, j)] = vx[(1, j)];
            }
        }
        kind => {
            let s = if kind == BcKind::NoSlip { -1.0 } else { 1.0 };
            let s_south = if bc.south_vx == BcKind::NoSlip { -1.0 } else { 1.0 };
            for j in 0..cols {
                vx[(0, j)] = s * vx[(1, j)];
                vx[(ny, j)] = s_south * vx[(ny - 1, j)];
            }
        }
    }

    // vy along y: normal component. Walls at rows 0 and ny-1.
    match bc.north_vy {
        BcKind::Periodic => {
            for j in 0..cols {
                vy[(0, j)] = vy[(ny - 1, j)];
                vy[(ny, j)] = vy[(1, j)];
            }
        }
        _ => {
            for j in 0..cols {
                vy[(0, j)] = 0.0;
                vy[(ny - 1, j)] = 0.0;
            }
        }
    }

    // vy along x: tangential component. Mirror columns 0 and nx.
    match bc.west_vy {
        BcKind::Periodic => {
            for i in 0..rows {
                vy[(i, 0)] = vy[(i, nx - 1)];
                vy[(i, nx)] = vy[(i, 1)];
            }
        }
        kind => {
            let s = if kind == BcKind::NoSlip { -1.0 } else { 1.0 };
            let s_east = if bc.east_vy == BcKind::NoSlip { -1.0 } else { 1.0 };
            for i in 0..rows {
                vy[(i, 0)] = s * vy[(i, 1)];
                vy[(i, nx)] = s_east * vy[(i, nx - 1)];
            }
        }
    }

    Ok(())
}

/// Reference scales derived from a (time, length, viscosity) anchor triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSet {
    pub t0: f64,
    pub l0: f64,
    pub m0: f64,
    pub rho0: f64,
    pub g0: f64,
}

/// Solves the dimensional relations `T0 = t0`, `L0 = x0`, `M0 = eta0*x0*t0`
/// for the base scales, then derives the density and gravity scales.
pub fn unit_scaling(t0: f64, x0: f64, eta0: f64) -> Result<ScalingSet> {
    if !(t0 > 0.0 && x0 > 0.0 && eta0 > 0.0) {
        return Err(Error::invalid_arg(format!(
            "scaling anchors must be positive, got t0={t0}, x0={x0}, eta0={eta0}"
        )));
    }
    let m0 = eta0 * x0 * t0;
    Ok(ScalingSet {
        t0,
        l0: x0,
        m0,
        rho0: m0 / (x0 * x0 * x0),
        g0: x0 / (t0 * t0),
    })
}

impl ScalingSet {
    pub fn identity() -> Self {
        ScalingSet {
            t0: 1.0,
            l0: 1.0,
            m0: 1.0,
            rho0: 1.0,
            g0: 1.0,
        }
    }

    pub fn eta0(&self) -> f64 {
        self.m0 / (self.l0 * self.t0)
    }

    pub fn velocity0(&self) -> f64 {
        self.l0 / self.t0
    }

    pub fn pressure0(&self) -> f64 {
        self.m0 / (self.l0 * self.t0 * self.t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_small() {
        let g = make_uniform_grid(4, 4, 1.0, 1.0).unwrap();
        assert_eq!(g.dx, 0.25);
        assert_eq!(g.dy, 0.25);
        assert_eq!(g.x, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.x[g.nx] - g.x[0], g.xsize);
    }

    #[test]
    fn uniform_grid_sinker_resolution() {
        // 501 x 601 nodes over 100 km x 100 km: dx = 200 m, dy = 166.667 m.
        let g = make_uniform_grid(500, 600, 1e5, 1e5).unwrap();
        assert!((g.dx - 200.0).abs() < 1e-12);
        assert!((g.dy - 1e5 / 600.0).abs() < 1e-12);
        assert_eq!(g.shape(), (601, 501));
    }

    #[test]
    fn uniform_grid_rejects_degenerate() {
        assert!(make_uniform_grid(1, 4, 1.0, 1.0).is_err());
        assert!(make_uniform_grid(4, 4, 0.0, 1.0).is_err());
        assert!(make_uniform_grid(4, 4, 1.0, -2.0).is_err());
    }

    #[test]
    fn stagger_coords() {
        let g = make_uniform_grid(4, 2, 4.0, 2.0).unwrap();
        assert_eq!(g.x_coords(StaggerRole::Vx), g.x);
        let xp = g.x_coords(StaggerRole::Pressure);
        assert_eq!(xp[0], -0.5);
        assert_eq!(xp[1], 0.5);
        let yv = g.y_coords(StaggerRole::Vx);
        assert_eq!(yv[0], -0.5);
    }

    #[test]
    fn no_slip_mirrors_negate() {
        let g = make_uniform_grid(5, 5, 1.0, 1.0).unwrap();
        let mut f = FieldSet::new(&g);
        for i in 0..=g.ny {
            for j in 0..=g.nx {
                f.vx[(i, j)] = (i * 10 + j) as f64;
                f.vy[(i, j)] = (i * 10 + j) as f64 + 0.5;
            }
        }
        let bc = BcSpec::uniform(BcKind::NoSlip);
        apply_velocity_bc(&mut f.vx, &mut f.vy, &bc, &g).unwrap();
        for i in 0..=g.ny {
            // Tangential vy mirrored with a sign: zero average at the wall.
            assert_eq!(f.vy[(i, 0)], -f.vy[(i, 1)]);
            assert_eq!(f.vy[(i, g.nx)], -f.vy[(i, g.nx - 1)]);
            // Normal vx pinned on both walls.
            assert_eq!(f.vx[(i, 0)], 0.0);
            assert_eq!(f.vx[(i, g.east_wall())], 0.0);
        }
        for j in 0..=g.nx {
            assert_eq!(f.vx[(0, j)], -f.vx[(1, j)]);
            assert_eq!(f.vx[(g.ny, j)], -f.vx[(g.ny - 1, j)]);
            assert_eq!(f.vy[(0, j)], 0.0);
            assert_eq!(f.vy[(g.south_wall(), j)], 0.0);
        }
    }

    #[test]
    fn free_slip_mirrors_copy() {
        let g = make_uniform_grid(5, 4, 1.0, 1.0).unwrap();
        let mut f = FieldSet::new(&g);
        for i in 0..=g.ny {
            for j in 0..=g.nx {
                f.vy[(i, j)] = (i + 2 * j) as f64;
            }
        }
        let bc = BcSpec::free_slip();
        apply_velocity_bc(&mut f.vx, &mut f.vy, &bc, &g).unwrap();
        for i in 0..=g.ny {
            assert_eq!(f.vy[(i, 0)], f.vy[(i, 1)]);
        }
    }

    #[test]
    fn periodic_wraps() {
        let g = make_uniform_grid(6, 5, 1.0, 1.0).unwrap();
        let mut f = FieldSet::new(&g);
        for i in 0..=g.ny {
            for j in 0..=g.nx {
                f.vx[(i, j)] = (100 * i + j) as f64;
            }
        }
        let mut bc = BcSpec::free_slip();
        bc.west_vx = BcKind::Periodic;
        bc.east_vx = BcKind::Periodic;
        bc.west_vy = BcKind::Periodic;
        bc.east_vy = BcKind::Periodic;
        apply_velocity_bc(&mut f.vx, &mut f.vy, &bc, &g).unwrap();
        for i in 0..=g.ny {
            assert_eq!(f.vx[(i, 0)], f.vx[(i, g.nx - 1)]);
            assert_eq!(f.vx[(i, g.nx)], f.vx[(i, 1)]);
        }
    }

    #[test]
    fn unpaired_periodic_rejected() {
        let mut bc = BcSpec::free_slip();
        bc.west_vx = BcKind::Periodic;
        assert!(bc.validate().is_err());
    }

    #[test]
    fn bc_idempotent() {
        let g = make_uniform_grid(7, 6, 2.0, 3.0).unwrap();
        let mut f = FieldSet::new(&g);
        for i in 0..=g.ny {
            for j in 0..=g.nx {
                f.vx[(i, j)] = (i as f64).sin() + (j as f64).cos();
                f.vy[(i, j)] = (i as f64 * 0.3).cos() - j as f64;
            }
        }
        let mut bc = BcSpec::uniform(BcKind::NoSlip);
        bc.north_vx = BcKind::FreeSlip;
        bc.south_vx = BcKind::FreeSlip;
        apply_velocity_bc(&mut f.vx, &mut f.vy, &bc, &g).unwrap();
        let once = f.clone();
        apply_velocity_bc(&mut f.vx, &mut f.vy, &bc, &g).unwrap();
        assert_eq!(f.vx, once.vx);
        assert_eq!(f.vy, once.vy);
    }

    #[test]
    fn scaling_example() {
        let s = unit_scaling(1.0, 1e5, 1e18).unwrap();
        assert_eq!(s.m0, 1e23);
        assert!((s.rho0 - 1e8).abs() < 1e-6 * 1e8);
        assert_eq!(s.g0, 1e5);
        assert!((s.eta0() - 1e18).abs() < 1e3);
        let id = unit_scaling(1.0, 1.0, 1.0).unwrap();
        assert_eq!(id, ScalingSet::identity());
        assert!(unit_scaling(0.0, 1.0, 1.0).is_err());
    }
}
