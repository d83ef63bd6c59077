//! Geometric multigrid for the velocity subsystem: level construction,
//! bilinear restriction/prolongation driven by coordinate bisection, three
//! smoothers (damped Jacobi, red-black Gauss-Seidel, RAS temporal blocking),
//! and the V-cycle.
//!
//! Pressure is never smoothed here; the outer Uzawa iteration folds the
//! pressure gradient into the right-hand side before each cycle. Coarse
//! levels rediscretize the problem: viscosities are restricted level to
//! level with the same restriction operator used for residuals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::grid::{apply_velocity_bc, BcKind, BcSpec, GridGeometry2D, StaggerRole};
use crate::stokes::{diag_minus_l, velocity_operator_apply};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherKind {
    Jacobi,
    Rbgs,
    Ras,
    /// Jacobi on the finest level, RAS on all coarser levels.
    Mixed,
}

#[derive(Clone, Debug)]
pub struct SmootherConfig {
    pub kind: SmootherKind,
    /// Velocity relaxation factor in (0, 1].
    pub omega_v: f64,
    pub pre_iters: usize,
    pub post_iters: usize,
    /// RAS tile extent (rows, cols).
    pub ras_tile: (usize, usize),
    /// Local iterations per tile; must be even so the ping-pong buffers end
    /// on the readable side.
    pub ras_inner: usize,
    /// Per-level multiplier on the smoothing counts.
    pub coarsening_growth: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            kind: SmootherKind::Jacobi,
            omega_v: 0.3,
            pre_iters: 5,
            post_iters: 5,
            ras_tile: (32, 32),
            ras_inner: 4,
            coarsening_growth: 2.5,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_v > 0.0 && self.omega_v <= 1.0) {
            return Err(Error::invalid_config(format!(
                "omega_v must be in (0,1], got {}",
                self.omega_v
            )));
        }
        if self.ras_inner == 0 || self.ras_inner % 2 != 0 {
            return Err(Error::invalid_config(format!(
                "ras_inner must be a positive even count, got {}",
                self.ras_inner
            )));
        }
        if self.coarsening_growth < 1.0 {
            return Err(Error::invalid_config(format!(
                "coarsening_growth must be >= 1, got {}",
                self.coarsening_growth
            )));
        }
        Ok(())
    }

    pub fn kind_for_level(&self, level: usize) -> SmootherKind {
        match self.kind {
            SmootherKind::Mixed => {
                if level == 0 {
                    SmootherKind::Jacobi
                } else {
                    SmootherKind::Ras
                }
            }
            k => k,
        }
    }

    pub fn iters_for_level(&self, base: usize, level: usize) -> usize {
        ((base as f64) * self.coarsening_growth.powi(level as i32)).round() as usize
    }
}

/// Requested coarsening between consecutive levels.
#[derive(Clone, Copy, Debug)]
pub enum Coarsening {
    /// Fixed per-level node-count divisor, >= 1.5.
    Factor(f64),
    /// Choose the factor so the coarsest level has about this many nodes
    /// along the smaller axis.
    AutoTarget(usize),
}

/// One grid level with its rediscretized viscosities and work buffers.
#[derive(Clone, Debug)]
pub struct MgLevel {
    pub geom: GridGeometry2D,
    pub etab: Field2,
    pub etap: Field2,
    pub diag_vx: Field2,
    pub diag_vy: Field2,
    pub vx: Field2,
    pub vy: Field2,
    pub rhs_vx: Field2,
    pub rhs_vy: Field2,
}

impl MgLevel {
    fn new(geom: GridGeometry2D, etab: Field2, etap: Field2) -> Self {
        let (diag_vx, diag_vy) = diag_minus_l(&geom, &etab, &etap);
        let z = geom.alloc();
        MgLevel {
            geom,
            etab,
            etap,
            diag_vx,
            diag_vy,
            vx: z.clone(),
            vy: z.clone(),
            rhs_vx: z.clone(),
            rhs_vy: z,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MgHierarchy {
    pub levels: Vec<MgLevel>,
}

/// Smallest index i such that `x[i] >= xt`; the last index when `xt` exceeds
/// every entry.
pub fn bisect_bound(x: &[f64], xt: f64) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::invalid_arg("bisect_bound on empty vector"));
    }
    let mut l = 0usize;
    let mut r = x.len() - 1;
    while l < r {
        let m = (l + r) / 2;
        if x[m] < xt {
            l = m + 1;
        } else {
            r = m;
        }
    }
    Ok(l)
}

#[inline]
fn tent(r: f64) -> f64 {
    (1.0 - r.abs()).max(0.0)
}

/// Weighted bilinear restriction of a fine field onto coarse coordinates,
/// with companion weight accumulation and final normalization. Coarse cells
/// are visited in four checkerboard sweeps; no two cells of one sweep share
/// a coarse node, so the per-node accumulation order is fixed regardless of
/// how cells within a sweep are scheduled.
pub fn restrict(
    fine: &Field2,
    fine_x: &[f64],
    fine_y: &[f64],
    coarse_x: &[f64],
    coarse_y: &[f64],
) -> Result<Field2> {
    let ncx = coarse_x.len();
    let ncy = coarse_y.len();
    let cells_x = ncx - 1;
    let cells_y = ncy - 1;
    let dxh = coarse_x[1] - coarse_x[0];
    let dyh = coarse_y[1] - coarse_y[0];

    let mut j_bounds = vec![0usize; cells_x + 1];
    for jh in 0..cells_x {
        j_bounds[jh] = bisect_bound(fine_x, coarse_x[jh])?;
    }
    j_bounds[cells_x] = fine_x.len() - 1;
    let mut i_bounds = vec![0usize; cells_y + 1];
    for ih in 0..cells_y {
        i_bounds[ih] = bisect_bound(fine_y, coarse_y[ih])?;
    }
    i_bounds[cells_y] = fine_y.len() - 1;

    let mut acc = Field2::zeros(ncy, ncx);
    let mut wacc = Field2::zeros(ncy, ncx);
    for cy in 0..2usize {
        for cx in 0..2usize {
            let mut ih = cy;
            while ih < cells_y {
                let mut jh = cx;
                while jh < cells_x {
                    for i in i_bounds[ih]..=i_bounds[ih + 1] {
                        for j in j_bounds[jh]..=j_bounds[jh + 1] {
                            let u = fine[(i, j)];
                            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                                let rx = (fine_x[j] - coarse_x[jh + dj]) / dxh;
                                let ry = (fine_y[i] - coarse_y[ih + di]) / dyh;
                                let w = tent(rx) * tent(ry);
                                acc[(ih + di, jh + dj)] += w * u;
                                wacc[(ih + di, jh + dj)] += w;
                            }
                        }
                    }
                    jh += 2;
                }
                ih += 2;
            }
        }
    }
    for k in 0..acc.as_slice().len() {
        let w = wacc.as_slice()[k];
        assert!(w > 0.0, "restriction left a coarse node without weight");
        acc.as_mut_slice()[k] /= w;
    }
    Ok(acc)
}

/// Bilinear interpolation of a coarse field onto fine coordinates. Weights
/// sum to one, so no normalization is needed; fine nodes outside the coarse
/// span clamp to the nearest coarse cell.
pub fn prolong(
    coarse: &Field2,
    coarse_x: &[f64],
    coarse_y: &[f64],
    fine_x: &[f64],
    fine_y: &[f64],
) -> Result<Field2> {
    let dxh = coarse_x[1] - coarse_x[0];
    let dyh = coarse_y[1] - coarse_y[0];
    let mut out = Field2::zeros(fine_y.len(), fine_x.len());
    let mut cells_j = Vec::with_capacity(fine_x.len());
    for &xf in fine_x {
        let k = bisect_bound(coarse_x, xf)?;
        let cell = if k == 0 { 0 } else { k - 1 };
        let t = ((xf - coarse_x[cell]) / dxh).clamp(0.0, 1.0);
        cells_j.push((cell, t));
    }
    for (i, &yf) in fine_y.iter().enumerate() {
        let k = bisect_bound(coarse_y, yf)?;
        let cell_i = if k == 0 { 0 } else { k - 1 };
        let s = ((yf - coarse_y[cell_i]) / dyh).clamp(0.0, 1.0);
        for (j, &(cell_j, t)) in cells_j.iter().enumerate() {
            out[(i, j)] = coarse[(cell_i, cell_j)] * (1.0 - t) * (1.0 - s)
                + coarse[(cell_i, cell_j + 1)] * t * (1.0 - s)
                + coarse[(cell_i + 1, cell_j)] * (1.0 - t) * s
                + coarse[(cell_i + 1, cell_j + 1)] * t * s;
        }
    }
    Ok(out)
}

fn coarse_geometry(fine: &GridGeometry2D, factor: f64) -> GridGeometry2D {
    // Node counts shrink by the factor; the simulated span is preserved.
    let shrink = |n: usize| ((n as f64 / factor).round() as usize).max(4);
    let nxc = shrink(fine.nx);
    let nyc = shrink(fine.ny);
    let dx = fine.domain_width() / (nxc - 1) as f64;
    let dy = fine.domain_height() / (nyc - 1) as f64;
    let x: Vec<f64> = (0..=nxc).map(|j| fine.x[0] + j as f64 * dx).collect();
    let y: Vec<f64> = (0..=nyc).map(|i| fine.y[0] + i as f64 * dy).collect();
    GridGeometry2D {
        nx: nxc,
        ny: nyc,
        dx,
        dy,
        xsize: dx * nxc as f64,
        ysize: dy * nyc as f64,
        x,
        y,
    }
}

fn restrict_role(
    fine_geom: &GridGeometry2D,
    coarse_geom: &GridGeometry2D,
    field: &Field2,
    role: StaggerRole,
) -> Result<Field2> {
    restrict(
        field,
        &fine_geom.x_coords(role),
        &fine_geom.y_coords(role),
        &coarse_geom.x_coords(role),
        &coarse_geom.y_coords(role),
    )
}

/// Builds the level hierarchy, restricting the viscosities level to level.
/// Level 0 is the finest. Errors if a requested level would fall below 4x4
/// nodes or an explicit factor is below 1.5.
pub fn build_hierarchy(
    fine: &GridGeometry2D,
    etab: &Field2,
    etap: &Field2,
    levels: usize,
    coarsening: Coarsening,
) -> Result<MgHierarchy> {
    if levels == 0 {
        return Err(Error::invalid_config("hierarchy needs at least one level"));
    }
    let factor = match coarsening {
        Coarsening::Factor(f) => {
            if f < 1.5 {
                return Err(Error::invalid_config(format!(
                    "explicit coarsening factor must be >= 1.5, got {f}"
                )));
            }
            f
        }
        Coarsening::AutoTarget(target) => {
            if levels == 1 {
                1.0
            } else {
                let n = fine.nx.min(fine.ny) as f64;
                (n / target.max(4) as f64).powf(1.0 / (levels - 1) as f64)
            }
        }
    };
    let mut hierarchy = vec![MgLevel::new(fine.clone(), etab.clone(), etap.clone())];
    for _ in 1..levels {
        if factor <= 1.0 {
            break;
        }
        let prev = hierarchy.last().unwrap();
        let cg = coarse_geometry(&prev.geom, factor);
        if cg.nx < 4 || cg.ny < 4 {
            return Err(Error::invalid_config(format!(
                "coarsest grid {}x{} fell below 4x4 nodes",
                cg.nx, cg.ny
            )));
        }
        if cg.nx == prev.geom.nx && cg.ny == prev.geom.ny {
            break; // factor too close to 1 to make progress
        }
        let cetab = restrict_role(&prev.geom, &cg, &prev.etab, StaggerRole::Basic)?;
        let cetap = restrict_role(&prev.geom, &cg, &prev.etap, StaggerRole::Pressure)?;
        hierarchy.push(MgLevel::new(cg, cetab, cetap));
    }
    Ok(MgHierarchy { levels: hierarchy })
}

impl MgHierarchy {
    /// Replaces the fine-level viscosities and re-restricts them down the
    /// hierarchy (used at every viscosity-rescaling stage change).
    pub fn rebuild_viscosity(&mut self, etab: &Field2, etap: &Field2) -> Result<()> {
        self.levels[0].etab = etab.clone();
        self.levels[0].etap = etap.clone();
        for l in 0..self.levels.len() {
            if l > 0 {
                let (fine, coarse) = self.levels.split_at_mut(l);
                let f = &fine[l - 1];
                let c = &mut coarse[0];
                c.etab = restrict_role(&f.geom, &c.geom, &f.etab, StaggerRole::Basic)?;
                c.etap = restrict_role(&f.geom, &c.geom, &f.etap, StaggerRole::Pressure)?;
            }
            let (dvx, dvy) = diag_minus_l(
                &self.levels[l].geom,
                &self.levels[l].etab,
                &self.levels[l].etap,
            );
            self.levels[l].diag_vx = dvx;
            self.levels[l].diag_vy = dvy;
        }
        Ok(())
    }
}

/// Damped Jacobi: next = cur - omega * (rhs - L cur) / diag(-L), reading only
/// the previous iterate. Boundary conditions are re-applied after every sweep.
pub fn smooth_jacobi(level: &mut MgLevel, bc: &BcSpec, iters: usize, omega: f64) {
    let mut next_vx = level.vx.clone();
    let mut next_vy = level.vy.clone();
    let mut op_vx = level.geom.alloc();
    let mut op_vy = level.geom.alloc();
    for _ in 0..iters {
        velocity_operator_apply(
            &level.geom,
            &level.vx,
            &level.vy,
            &level.etab,
            &level.etap,
            &mut op_vx,
            &mut op_vy,
        );
        next_vx.as_mut_slice().copy_from_slice(level.vx.as_slice());
        next_vy.as_mut_slice().copy_from_slice(level.vy.as_slice());
        let (ir, jr) = level.geom.vx_interior();
        for i in ir {
            for j in jr.clone() {
                let r = level.rhs_vx[(i, j)] - op_vx[(i, j)];
                next_vx[(i, j)] = level.vx[(i, j)] - omega * r / level.diag_vx[(i, j)];
            }
        }
        let (ir, jr) = level.geom.vy_interior();
        for i in ir {
            for j in jr.clone() {
                let r = level.rhs_vy[(i, j)] - op_vy[(i, j)];
                next_vy[(i, j)] = level.vy[(i, j)] - omega * r / level.diag_vy[(i, j)];
            }
        }
        apply_velocity_bc(&mut next_vx, &mut next_vy, bc, &level.geom).expect("valid bc");
        std::mem::swap(&mut level.vx, &mut next_vx);
        std::mem::swap(&mut level.vy, &mut next_vy);
    }
}

#[inline]
fn vx_point(
    dx: f64,
    dy: f64,
    vx: &Field2,
    vy: &Field2,
    etab: &Field2,
    etap: &Field2,
    i: usize,
    j: usize,
) -> f64 {
    let dx2 = dx * dx;
    let dy2 = dy * dy;
    let dxy = dx * dy;
    let eta_a = etap[(i, j)];
    let eta_b = etap[(i, j + 1)];
    let eta1 = etab[(i - 1, j)];
    let eta2 = etab[(i, j)];
    2.0 * eta_a / dx2 * vx[(i, j - 1)]
        + eta1 / dy2 * vx[(i - 1, j)]
        + (-(eta1 + eta2) / dy2 - 2.0 * (eta_a + eta_b) / dx2) * vx[(i, j)]
        + eta2 / dy2 * vx[(i + 1, j)]
        + 2.0 * eta_b / dx2 * vx[(i, j + 1)]
        + eta1 / dxy * vy[(i - 1, j)]
        - eta2 / dxy * vy[(i, j)]
        - eta1 / dxy * vy[(i - 1, j + 1)]
        + eta2 / dxy * vy[(i, j + 1)]
}

#[inline]
fn vy_point(
    dx: f64,
    dy: f64,
    vx: &Field2,
    vy: &Field2,
    etab: &Field2,
    etap: &Field2,
    i: usize,
    j: usize,
) -> f64 {
    let dx2 = dx * dx;
    let dy2 = dy * dy;
    let dxy = dx * dy;
    let eta_a = etap[(i, j)];
    let eta_b = etap[(i + 1, j)];
    let eta1 = etab[(i, j - 1)];
    let eta2 = etab[(i, j)];
    2.0 * eta_a / dy2 * vy[(i - 1, j)]
        + eta1 / dx2 * vy[(i, j - 1)]
        + (-(eta1 + eta2) / dx2 - 2.0 * (eta_a + eta_b) / dy2) * vy[(i, j)]
        + eta2 / dx2 * vy[(i, j + 1)]
        + 2.0 * eta_b / dy2 * vy[(i + 1, j)]
        + eta1 / dxy * vx[(i, j - 1)]
        - eta2 / dxy * vx[(i, j)]
        - eta1 / dxy * vx[(i + 1, j - 1)]
        + eta2 / dxy * vx[(i + 1, j)]
}

/// Damped red-black Gauss-Seidel. Each sweep runs four sub-sweeps (vx on the
/// red nodes, vy on the red nodes, then the black pair); updates within a
/// sub-sweep read only entries the sub-sweep does not write, so they are
/// order-independent.
pub fn smooth_rbgs(level: &mut MgLevel, bc: &BcSpec, iters: usize, omega: f64) {
    let geom = level.geom.clone();
    for _ in 0..iters {
        for color in 0..2usize {
            let (ir, jr) = geom.vx_interior();
            for i in ir {
                for j in jr.clone() {
                    if (i + j) % 2 != color {
                        continue;
                    }
                    let a = vx_point(geom.dx, geom.dy, &level.vx, &level.vy, &level.etab, &level.etap, i, j);
                    let r = level.rhs_vx[(i, j)] - a;
                    level.vx[(i, j)] -= omega * r / level.diag_vx[(i, j)];
                }
            }
            apply_velocity_bc(&mut level.vx, &mut level.vy, bc, &geom).expect("valid bc");
            let (ir, jr) = geom.vy_interior();
            for i in ir {
                for j in jr.clone() {
                    if (i + j) % 2 != color {
                        continue;
                    }
                    let a = vy_point(geom.dx, geom.dy, &level.vx, &level.vy, &level.etab, &level.etap, i, j);
                    let r = level.rhs_vy[(i, j)] - a;
                    level.vy[(i, j)] -= omega * r / level.diag_vy[(i, j)];
                }
            }
            apply_velocity_bc(&mut level.vx, &mut level.vy, bc, &geom).expect("valid bc");
        }
    }
}

/// Consecutive index runs covering `lo..=hi` in blocks of width `t` shifted
/// by `s`, clipped at the ends.
fn shifted_runs(lo: usize, hi: usize, t: usize, s: usize) -> Vec<(usize, usize)> {
    let t = t.max(1);
    let mut runs = Vec::new();
    let mut start = lo;
    while start <= hi {
        let block = (start - lo + s) / t;
        let block_end = (lo + (block + 1) * t).saturating_sub(s + 1);
        let end = block_end.min(hi);
        runs.push((start, end));
        start = end + 1;
    }
    runs
}

/// RAS-type temporal blocking: the interior is partitioned into tiles whose
/// grid is shifted randomly every outer iteration; each tile runs `ras_inner`
/// local damped-Jacobi sweeps on cache-resident ping-pong buffers. The tile
/// ring is frozen at the outer-iteration snapshot except where it coincides
/// with a physical boundary, where the mirror rule is refreshed locally so a
/// whole-domain tile reproduces plain Jacobi exactly. All tiles read the same
/// snapshot and write disjoint regions, so the result is deterministic for a
/// fixed seed no matter how tiles are scheduled.
pub fn smooth_ras(
    level: &mut MgLevel,
    bc: &BcSpec,
    n_max: usize,
    cfg: &SmootherConfig,
    rng: &mut ChaCha8Rng,
) {
    let (t_i, t_j) = cfg.ras_tile;
    let t_inner = cfg.ras_inner;
    let mut n_outer = n_max.div_ceil(t_inner);
    n_outer += n_outer % 2;
    let omega = cfg.omega_v;

    let geom = level.geom.clone();
    // Hull of both components' interiors: rows 1..=ny-1, cols 1..=nx-1.
    let (row_lo, row_hi) = (1usize, geom.ny - 1);
    let (col_lo, col_hi) = (1usize, geom.nx - 1);

    for _ in 0..n_outer {
        let s_i = rng.gen_range(0..t_i.max(1));
        let s_j = rng.gen_range(0..t_j.max(1));
        let snap_vx = level.vx.clone();
        let snap_vy = level.vy.clone();
        for &(r0, r1) in &shifted_runs(row_lo, row_hi, t_i, s_i) {
            for &(c0, c1) in &shifted_runs(col_lo, col_hi, t_j, s_j) {
                smooth_tile(level, bc, &geom, &snap_vx, &snap_vy, (r0, r1), (c0, c1), t_inner, omega);
            }
        }
        apply_velocity_bc(&mut level.vx, &mut level.vy, bc, &geom).expect("valid bc");
    }
}

#[allow(clippy::too_many_arguments)]
fn smooth_tile(
    level: &mut MgLevel,
    bc: &BcSpec,
    geom: &GridGeometry2D,
    snap_vx: &Field2,
    snap_vy: &Field2,
    (r0, r1): (usize, usize),
    (c0, c1): (usize, usize),
    t_inner: usize,
    omega: f64,
) {
    let rows = r1 - r0 + 1;
    let cols = c1 - c0 + 1;
    let lrows = rows + 2;
    let lcols = cols + 2;
    // Local (li, lj) maps to global (r0 - 1 + li, c0 - 1 + lj); the +-1 ring
    // always exists because the hull is strictly inside the padded arrays.
    let copy_local = |src: &Field2| {
        Field2::from_fn(lrows, lcols, |li, lj| src[(r0 - 1 + li, c0 - 1 + lj)])
    };
    let mut vx_read = copy_local(snap_vx);
    let mut vy_read = copy_local(snap_vy);
    let mut vx_write = vx_read.clone();
    let mut vy_write = vy_read.clone();
    let etab_l = copy_local(&level.etab);
    let etap_l = copy_local(&level.etap);

    let touches_north = r0 == 1;
    let touches_south = r1 == geom.ny - 1;
    let touches_west = c0 == 1;
    let touches_east = c1 == geom.nx - 1;
    let sign = |kind: BcKind| if kind == BcKind::NoSlip { -1.0 } else { 1.0 };

    let (vx_ir, vx_jr) = geom.vx_interior();
    let (vy_ir, vy_jr) = geom.vy_interior();

    for _ in 0..t_inner {
        for li in 1..=rows {
            let gi = r0 + li - 1;
            for lj in 1..=cols {
                let gj = c0 + lj - 1;
                if vx_ir.contains(&gi) && vx_jr.contains(&gj) {
                    let a = vx_point(geom.dx, geom.dy, &vx_read, &vy_read, &etab_l, &etap_l, li, lj);
                    let r = level.rhs_vx[(gi, gj)] - a;
                    vx_write[(li, lj)] = vx_read[(li, lj)] - omega * r / level.diag_vx[(gi, gj)];
                } else {
                    vx_write[(li, lj)] = vx_read[(li, lj)];
                }
                if vy_ir.contains(&gi) && vy_jr.contains(&gj) {
                    let a = vy_point(geom.dx, geom.dy, &vx_read, &vy_read, &etab_l, &etap_l, li, lj);
                    let r = level.rhs_vy[(gi, gj)] - a;
                    vy_write[(li, lj)] = vy_read[(li, lj)] - omega * r / level.diag_vy[(gi, gj)];
                } else {
                    vy_write[(li, lj)] = vy_read[(li, lj)];
                }
            }
        }
        // Refresh ring entries that carry physical boundary rules.
        if touches_north {
            let s = sign(bc.north_vx);
            for lj in 0..lcols {
                vx_write[(0, lj)] = s * vx_write[(1, lj)];
                vy_write[(0, lj)] = 0.0;
            }
        }
        if touches_south {
            let s = sign(bc.south_vx);
            for lj in 0..lcols {
                vx_write[(rows + 1, lj)] = s * vx_write[(rows, lj)];
                vy_write[(rows, lj)] = 0.0;
            }
        }
        if touches_west {
            let s = sign(bc.west_vy);
            for li in 0..lrows {
                vy_write[(li, 0)] = s * vy_write[(li, 1)];
                vx_write[(li, 0)] = 0.0;
            }
        }
        if touches_east {
            let s = sign(bc.east_vy);
            for li in 0..lrows {
                vy_write[(li, cols + 1)] = s * vy_write[(li, cols)];
                vx_write[(li, cols)] = 0.0;
            }
        }
        std::mem::swap(&mut vx_read, &mut vx_write);
        std::mem::swap(&mut vy_read, &mut vy_write);
    }

    for li in 1..=rows {
        let gi = r0 + li - 1;
        for lj in 1..=cols {
            let gj = c0 + lj - 1;
            if vx_ir.contains(&gi) && vx_jr.contains(&gj) {
                level.vx[(gi, gj)] = vx_read[(li, lj)];
            }
            if vy_ir.contains(&gi) && vy_jr.contains(&gj) {
                level.vy[(gi, gj)] = vy_read[(li, lj)];
            }
        }
    }
}

fn smooth(level: &mut MgLevel, bc: &BcSpec, kind: SmootherKind, iters: usize, cfg: &SmootherConfig, rng: &mut ChaCha8Rng) {
    match kind {
        SmootherKind::Jacobi => smooth_jacobi(level, bc, iters, cfg.omega_v),
        SmootherKind::Rbgs => smooth_rbgs(level, bc, iters, cfg.omega_v),
        SmootherKind::Ras | SmootherKind::Mixed => smooth_ras(level, bc, iters, cfg, rng),
    }
}

/// Residual of the velocity subsystem on one level: rhs - L v on the interior,
/// zero elsewhere.
fn level_residual(level: &MgLevel, out_vx: &mut Field2, out_vy: &mut Field2) {
    velocity_operator_apply(
        &level.geom,
        &level.vx,
        &level.vy,
        &level.etab,
        &level.etap,
        out_vx,
        out_vy,
    );
    let (ir, jr) = level.geom.vx_interior();
    let mut keep_vx = level.geom.alloc();
    for i in ir {
        for j in jr.clone() {
            keep_vx[(i, j)] = level.rhs_vx[(i, j)] - out_vx[(i, j)];
        }
    }
    *out_vx = keep_vx;
    let (ir, jr) = level.geom.vy_interior();
    let mut keep_vy = level.geom.alloc();
    for i in ir {
        for j in jr.clone() {
            keep_vy[(i, j)] = level.rhs_vy[(i, j)] - out_vy[(i, j)];
        }
    }
    *out_vy = keep_vy;
}

fn zero_non_interior(geom: &GridGeometry2D, rhs_vx: &mut Field2, rhs_vy: &mut Field2) {
    let (ir, jr) = geom.vx_interior();
    let mut masked = geom.alloc();
    for i in ir {
        for j in jr.clone() {
            masked[(i, j)] = rhs_vx[(i, j)];
        }
    }
    *rhs_vx = masked;
    let (ir, jr) = geom.vy_interior();
    let mut masked = geom.alloc();
    for i in ir {
        for j in jr.clone() {
            masked[(i, j)] = rhs_vy[(i, j)];
        }
    }
    *rhs_vy = masked;
}

/// One V-cycle on the velocity subsystem. The caller seeds `levels[0]` with
/// the current iterate and right-hand side; the corrected iterate is left in
/// `levels[0].vx/vy`. Smoothing counts grow by `coarsening_growth` per level
/// (applied to both the pre and post counts) and the coarsest level is
/// approximated by 4x the finest total smoothing count of damped Jacobi.
pub fn v_cycle(
    hierarchy: &mut MgHierarchy,
    cfg: &SmootherConfig,
    bc: &BcSpec,
    rng: &mut ChaCha8Rng,
) {
    cycle_level(&mut hierarchy.levels, 0, cfg, bc, rng);
}

fn cycle_level(
    levels: &mut [MgLevel],
    l: usize,
    cfg: &SmootherConfig,
    bc: &BcSpec,
    rng: &mut ChaCha8Rng,
) {
    let last = levels.len() - 1;
    if l == last {
        let iters = 4 * (cfg.pre_iters + cfg.post_iters);
        smooth_jacobi(&mut levels[l], bc, iters, cfg.omega_v);
        return;
    }

    let kind = cfg.kind_for_level(l);
    let pre = cfg.iters_for_level(cfg.pre_iters, l);
    let post = cfg.iters_for_level(cfg.post_iters, l);
    smooth(&mut levels[l], bc, kind, pre, cfg, rng);

    // Restrict the residual to the coarse right-hand side.
    {
        let (fine_part, coarse_part) = levels.split_at_mut(l + 1);
        let fine = &fine_part[l];
        let coarse = &mut coarse_part[0];
        let mut r_vx = fine.geom.alloc();
        let mut r_vy = fine.geom.alloc();
        level_residual(fine, &mut r_vx, &mut r_vy);
        coarse.rhs_vx = restrict_role(&fine.geom, &coarse.geom, &r_vx, StaggerRole::Vx)
            .expect("restriction on nested spans");
        coarse.rhs_vy = restrict_role(&fine.geom, &coarse.geom, &r_vy, StaggerRole::Vy)
            .expect("restriction on nested spans");
        let cg = coarse.geom.clone();
        zero_non_interior(&cg, &mut coarse.rhs_vx, &mut coarse.rhs_vy);
        coarse.vx.fill(0.0);
        coarse.vy.fill(0.0);
    }

    cycle_level(levels, l + 1, cfg, bc, rng);

    // Prolongate and apply the coarse correction, then post-smooth.
    {
        let (fine_part, coarse_part) = levels.split_at_mut(l + 1);
        let fine = &mut fine_part[l];
        let coarse = &coarse_part[0];
        let dx_vx = prolong(
            &coarse.vx,
            &coarse.geom.x_coords(StaggerRole::Vx),
            &coarse.geom.y_coords(StaggerRole::Vx),
            &fine.geom.x_coords(StaggerRole::Vx),
            &fine.geom.y_coords(StaggerRole::Vx),
        )
        .expect("prolongation on nested spans");
        let dx_vy = prolong(
            &coarse.vy,
            &coarse.geom.x_coords(StaggerRole::Vy),
            &coarse.geom.y_coords(StaggerRole::Vy),
            &fine.geom.x_coords(StaggerRole::Vy),
            &fine.geom.y_coords(StaggerRole::Vy),
        )
        .expect("prolongation on nested spans");
        let (ir, jr) = fine.geom.vx_interior();
        for i in ir {
            for j in jr.clone() {
                fine.vx[(i, j)] += dx_vx[(i, j)];
            }
        }
        let (ir, jr) = fine.geom.vy_interior();
        for i in ir {
            for j in jr.clone() {
                fine.vy[(i, j)] += dx_vy[(i, j)];
            }
        }
        let fg = fine.geom.clone();
        apply_velocity_bc(&mut fine.vx, &mut fine.vy, bc, &fg).expect("valid bc");
    }

    let kind = cfg.kind_for_level(l);
    smooth(&mut levels[l], bc, kind, post, cfg, rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;
    use rand::SeedableRng;

    #[test]
    fn bisect_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            x.sort_by(|a, b| a.partial_cmp(b).unwrap());
            x.dedup();
            let xt = rng.gen_range(-12.0..12.0);
            let got = bisect_bound(&x, xt).unwrap();
            let scan = x.iter().position(|&v| v >= xt).unwrap_or(x.len() - 1);
            assert_eq!(got, scan, "x={x:?} xt={xt}");
        }
        assert_eq!(bisect_bound(&[0.0, 1.0, 2.0, 3.0], 1.5).unwrap(), 2);
        assert_eq!(bisect_bound(&[0.0, 1.0, 2.0, 3.0], 1.0).unwrap(), 1);
        assert_eq!(bisect_bound(&[0.0, 1.0], 9.0).unwrap(), 1);
        assert!(bisect_bound(&[], 0.0).is_err());
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn restrict_constant_exact() {
        let fx = linspace(0.0, 1.0, 17);
        let fy = linspace(0.0, 1.0, 13);
        let cx = linspace(0.0, 1.0, 7);
        let cy = linspace(0.0, 1.0, 5);
        let fine = Field2::filled(13, 17, 3.75);
        let coarse = restrict(&fine, &fx, &fy, &cx, &cy).unwrap();
        for v in coarse.as_slice() {
            assert!((v - 3.75).abs() < 1e-13);
        }
    }

    /// Node-centric gather oracle: for each coarse node, sum the cell
    /// contributions in checkerboard-sweep order with the same weight
    /// formula; bitwise comparable to the scatter implementation.
    fn restrict_gather_oracle(
        fine: &Field2,
        fine_x: &[f64],
        fine_y: &[f64],
        coarse_x: &[f64],
        coarse_y: &[f64],
    ) -> Field2 {
        let ncx = coarse_x.len();
        let ncy = coarse_y.len();
        let cells_x = ncx - 1;
        let cells_y = ncy - 1;
        let dxh = coarse_x[1] - coarse_x[0];
        let dyh = coarse_y[1] - coarse_y[0];
        let mut jb = vec![0usize; cells_x + 1];
        for jh in 0..cells_x {
            jb[jh] = bisect_bound(fine_x, coarse_x[jh]).unwrap();
        }
        jb[cells_x] = fine_x.len() - 1;
        let mut ib = vec![0usize; cells_y + 1];
        for ih in 0..cells_y {
            ib[ih] = bisect_bound(fine_y, coarse_y[ih]).unwrap();
        }
        ib[cells_y] = fine_y.len() - 1;

        let mut out = Field2::zeros(ncy, ncx);
        for ni in 0..ncy {
            for nj in 0..ncx {
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                // Cells touching this node, in the order the four sweeps
                // visit them: sweep (cy, cx) handles cells with parity (cy, cx).
                for cy in 0..2usize {
                    for cx in 0..2usize {
                        for (ci, cj) in [
                            (ni.wrapping_sub(1), nj.wrapping_sub(1)),
                            (ni.wrapping_sub(1), nj),
                            (ni, nj.wrapping_sub(1)),
                            (ni, nj),
                        ] {
                            if ci >= cells_y || cj >= cells_x {
                                continue;
                            }
                            if ci % 2 != cy || cj % 2 != cx {
                                continue;
                            }
                            for i in ib[ci]..=ib[ci + 1] {
                                for j in jb[cj]..=jb[cj + 1] {
                                    // This node's (di, dj) within cell (ci, cj).
                                    let rx = (fine_x[j] - coarse_x[nj]) / dxh;
                                    let ry = (fine_y[i] - coarse_y[ni]) / dyh;
                                    let w = tent(rx) * tent(ry);
                                    num += w * fine[(i, j)];
                                    den += w;
                                }
                            }
                        }
                    }
                }
                out[(ni, nj)] = num / den;
            }
        }
        out
    }

    #[test]
    fn four_color_restriction_matches_gather_oracle_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fx = linspace(0.0, 2.0, 21);
        let fy = linspace(-1.0, 1.0, 17);
        let cx = linspace(0.0, 2.0, 8);
        let cy = linspace(-1.0, 1.0, 7);
        let fine = Field2::from_fn(17, 21, |_, _| rng.gen_range(-5.0..5.0));
        let a = restrict(&fine, &fx, &fy, &cx, &cy).unwrap();
        let b = restrict_gather_oracle(&fine, &fx, &fy, &cx, &cy);
        assert_eq!(a, b);
    }

    #[test]
    fn same_color_cells_share_no_nodes() {
        // Cells (i, j) and (i', j') of equal parity differ by >= 2 in some
        // axis, so their node sets {i, i+1} x {j, j+1} are disjoint.
        for (i1, j1) in [(0usize, 0usize), (2, 4), (6, 2)] {
            for (i2, j2) in [(2usize, 0usize), (0, 2), (4, 4), (2, 2)] {
                if (i1, j1) == (i2, j2) {
                    continue;
                }
                if i1 % 2 == i2 % 2 && j1 % 2 == j2 % 2 {
                    let rows_overlap = i1.abs_diff(i2) < 2;
                    let cols_overlap = j1.abs_diff(j2) < 2;
                    assert!(!(rows_overlap && cols_overlap));
                }
            }
        }
    }

    #[test]
    fn restrict_linear_matches_serial_oracle() {
        let fx = linspace(0.0, 1.0, 33);
        let fy = linspace(0.0, 1.0, 33);
        let cx = linspace(0.0, 1.0, 13);
        let cy = linspace(0.0, 1.0, 13);
        let fine = Field2::from_fn(33, 33, |i, j| 2.0 + 3.0 * fx[j] - fy[i]);
        let coarse = restrict(&fine, &fx, &fy, &cx, &cy).unwrap();
        let oracle = restrict_gather_oracle(&fine, &fx, &fy, &cx, &cy);
        assert_eq!(coarse, oracle);
        // Interior coarse nodes reproduce the linear field exactly.
        for i in 1..12 {
            for j in 1..12 {
                let exact = 2.0 + 3.0 * cx[j] - cy[i];
                assert!((coarse[(i, j)] - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prolong_constant_and_coincident() {
        let cx = linspace(0.0, 1.0, 5);
        let cy = linspace(0.0, 1.0, 5);
        let fx = linspace(0.0, 1.0, 9);
        let fy = linspace(0.0, 1.0, 9);
        let coarse = Field2::filled(5, 5, -2.5);
        let fine = prolong(&coarse, &cx, &cy, &fx, &fy).unwrap();
        for v in fine.as_slice() {
            assert!((v + 2.5).abs() < 1e-14);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coarse = Field2::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let fine = prolong(&coarse, &cx, &cy, &fx, &fy).unwrap();
        // fine node 2k coincides with coarse node k
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(fine[(2 * i, 2 * j)], coarse[(i, j)]);
            }
        }
    }

    #[test]
    fn prolong_reproduces_linears_on_nested_grids() {
        let cx = linspace(0.0, 2.0, 6);
        let cy = linspace(0.0, 1.0, 4);
        let fx = linspace(0.0, 2.0, 16);
        let fy = linspace(0.0, 1.0, 10);
        let coarse = Field2::from_fn(4, 6, |i, j| 1.0 - 0.5 * cx[j] + 2.0 * cy[i]);
        let fine = prolong(&coarse, &cx, &cy, &fx, &fy).unwrap();
        for i in 0..10 {
            for j in 0..16 {
                let exact = 1.0 - 0.5 * fx[j] + 2.0 * fy[i];
                assert!((fine[(i, j)] - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn prolong_matches_direct_four_term() {
        let cx = linspace(0.0, 1.0, 5);
        let cy = linspace(0.0, 1.0, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coarse = Field2::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let fx = vec![0.1, 0.33, 0.77];
        let fy = vec![0.2, 0.6];
        let fine = prolong(&coarse, &cx, &cy, &fx, &fy).unwrap();
        for (i, &yf) in fy.iter().enumerate() {
            for (j, &xf) in fx.iter().enumerate() {
                let cj = (xf / 0.25).floor() as usize;
                let ci = (yf / 0.25).floor() as usize;
                let t = (xf - cx[cj]) / 0.25;
                let s = (yf - cy[ci]) / 0.25;
                let direct = coarse[(ci, cj)] * (1.0 - t) * (1.0 - s)
                    + coarse[(ci, cj + 1)] * t * (1.0 - s)
                    + coarse[(ci + 1, cj)] * (1.0 - t) * s
                    + coarse[(ci + 1, cj + 1)] * t * s;
                assert!((fine[(i, j)] - direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hierarchy_node_counts() {
        let g = make_uniform_grid(100, 100, 1.0, 1.0).unwrap();
        let etab = Field2::filled(101, 101, 1.0);
        let etap = etab.clone();
        let h = build_hierarchy(&g, &etab, &etap, 3, Coarsening::Factor(2.5)).unwrap();
        let counts: Vec<usize> = h.levels.iter().map(|l| l.geom.nx).collect();
        assert_eq!(counts, vec![100, 40, 16]);
        // single level: just the fine grid
        let h1 = build_hierarchy(&g, &etab, &etap, 1, Coarsening::Factor(2.5)).unwrap();
        assert_eq!(h1.levels.len(), 1);
        // too-aggressive coarsening errors out
        assert!(build_hierarchy(&g, &etab, &etap, 6, Coarsening::Factor(5.0)).is_err());
        assert!(build_hierarchy(&g, &etab, &etap, 2, Coarsening::Factor(1.2)).is_err());
    }

    #[test]
    fn auto_factor_targets_coarsest() {
        let g = make_uniform_grid(2500, 2500, 1.0, 1.0).unwrap();
        let etab = Field2::filled(2501, 2501, 1.0);
        let etap = etab.clone();
        let h = build_hierarchy(&g, &etab, &etap, 6, Coarsening::AutoTarget(30)).unwrap();
        assert_eq!(h.levels.len(), 6);
        let expected = (2500.0f64 / 30.0).powf(0.2);
        let got = h.levels[0].geom.nx as f64 / h.levels[1].geom.nx as f64;
        assert!((got - expected).abs() < 0.05, "factor {got} vs {expected}");
        let coarsest = h.levels.last().unwrap().geom.nx;
        assert!((25..=35).contains(&coarsest), "coarsest {coarsest}");
    }

    #[test]
    fn restricted_viscosity_stays_positive() {
        let g = make_uniform_grid(40, 40, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let etab = Field2::from_fn(41, 41, |_, _| 10f64.powf(rng.gen_range(0.0..8.0)));
        let etap = Field2::from_fn(41, 41, |_, _| 10f64.powf(rng.gen_range(0.0..8.0)));
        let h = build_hierarchy(&g, &etab, &etap, 3, Coarsening::Factor(2.0)).unwrap();
        for level in &h.levels {
            assert!(level.etab.as_slice().iter().all(|&v| v > 0.0));
            assert!(level.etap.as_slice().iter().all(|&v| v > 0.0));
        }
    }
}
