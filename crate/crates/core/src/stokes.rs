//! Matrix-free application of the discrete Stokes operators on the staggered
//! grid, right-hand-side assembly, and the energy-based residual norms.
//!
//! The x-momentum stencil at an interior vx node (i, j) reads
//!
//! ```text
//! etaA = etap[i, j]     etaB = etap[i, j+1]
//! eta1 = etab[i-1, j]   eta2 = etab[i, j]
//!
//!   2 etaA/dx^2 * vx[i, j-1]  +  eta1/dy^2 * vx[i-1, j]
//! - ((eta1+eta2)/dy^2 + 2(etaA+etaB)/dx^2) * vx[i, j]
//! + eta2/dy^2 * vx[i+1, j]  +  2 etaB/dx^2 * vx[i, j+1]
//! + eta1/(dx dy) * vy[i-1, j]   - eta2/(dx dy) * vy[i, j]
//! - eta1/(dx dy) * vy[i-1, j+1] + eta2/(dx dy) * vy[i, j+1]
//! + (p[i, j] - p[i, j+1]) / dx
//! ```
//!
//! which is the pointwise form of d(sigma'_xx)/dx + d(sigma'_xy)/dy - dp/dx
//! with the stresses folded in. The y-momentum stencil is its x<->y mirror.
//! Interior ranges are `GridGeometry2D::vx_interior` / `vy_interior`; all
//! other entries of the output stay zero.

use crate::error::{Error, Result};
use crate::field::{Field2, KahanSum};
use crate::grid::{FieldSet, GridGeometry2D};

/// Body force per unit volume at the staggered velocity nodes. `fx` is kept
/// for interface symmetry and is identically zero in this model (gravity acts
/// along y only).
#[derive(Clone, Debug)]
pub struct BodyForce {
    pub fx: Field2,
    pub fy: Field2,
}

impl BodyForce {
    pub fn zero(geom: &GridGeometry2D) -> Self {
        BodyForce {
            fx: geom.alloc(),
            fy: geom.alloc(),
        }
    }

    /// fy = rho * g_y at vy nodes, with rho taken as the two-point average of
    /// the basic-node densities flanking each vy node.
    pub fn from_density(geom: &GridGeometry2D, rho: &Field2, g_y: f64) -> Self {
        let mut fy = geom.alloc();
        let (ir, jr) = geom.vy_interior();
        for i in ir {
            for j in jr.clone() {
                fy[(i, j)] = 0.5 * (rho[(i, j - 1)] + rho[(i, j)]) * g_y;
            }
        }
        BodyForce { fx: geom.alloc(), fy }
    }
}

/// L_x v + G_x p at every interior vx node (boundary and padding entries 0).
pub fn vx_momentum_apply(
    geom: &GridGeometry2D,
    vx: &Field2,
    vy: &Field2,
    p: &Field2,
    etab: &Field2,
    etap: &Field2,
) -> Field2 {
    let mut out = geom.alloc();
    let dx2 = geom.dx * geom.dx;
    let dy2 = geom.dy * geom.dy;
    let dxy = geom.dx * geom.dy;
    let (ir, jr) = geom.vx_interior();
    for i in ir {
        for j in jr.clone() {
            let eta_a = etap[(i, j)];
            let eta_b = etap[(i, j + 1)];
            let eta1 = etab[(i - 1, j)];
            let eta2 = etab[(i, j)];
            out[(i, j)] = 2.0 * eta_a / dx2 * vx[(i, j - 1)]
                + eta1 / dy2 * vx[(i - 1, j)]
                + (-(eta1 + eta2) / dy2 - 2.0 * (eta_a + eta_b) / dx2) * vx[(i, j)]
                + eta2 / dy2 * vx[(i + 1, j)]
                + 2.0 * eta_b / dx2 * vx[(i, j + 1)]
                + eta1 / dxy * vy[(i - 1, j)]
                - eta2 / dxy * vy[(i, j)]
                - eta1 / dxy * vy[(i - 1, j + 1)]
                + eta2 / dxy * vy[(i, j + 1)]
                + (p[(i, j)] - p[(i, j + 1)]) / geom.dx;
        }
    }
    out
}

/// L_y v + G_y p at every interior vy node; x<->y mirror of `vx_momentum_apply`.
pub fn vy_momentum_apply(
    geom: &GridGeometry2D,
    vx: &Field2,
    vy: &Field2,
    p: &Field2,
    etab: &Field2,
    etap: &Field2,
) -> Field2 {
    let mut out = geom.alloc();
    let dx2 = geom.dx * geom.dx;
    let dy2 = geom.dy * geom.dy;
    let dxy = geom.dx * geom.dy;
    let (ir, jr) = geom.vy_interior();
    for i in ir {
        for j in jr.clone() {
            let eta_a = etap[(i, j)];
            let eta_b = etap[(i + 1, j)];
            let eta1 = etab[(i, j - 1)];
            let eta2 = etab[(i, j)];
            out[(i, j)] = 2.0 * eta_a / dy2 * vy[(i - 1, j)]
                + eta1 / dx2 * vy[(i, j - 1)]
                + (-(eta1 + eta2) / dx2 - 2.0 * (eta_a + eta_b) / dy2) * vy[(i, j)]
                + eta2 / dx2 * vy[(i, j + 1)]
                + 2.0 * eta_b / dy2 * vy[(i + 1, j)]
                + eta1 / dxy * vx[(i, j - 1)]
                - eta2 / dxy * vx[(i, j)]
                - eta1 / dxy * vx[(i + 1, j - 1)]
                + eta2 / dxy * vx[(i + 1, j)]
                + (p[(i, j)] - p[(i + 1, j)]) / geom.dy;
        }
    }
    out
}

/// Velocity block only (pressure terms omitted); used by the multigrid solver
/// where the pressure contribution is folded into the right-hand side.
pub fn velocity_operator_apply(
    geom: &GridGeometry2D,
    vx: &Field2,
    vy: &Field2,
    etab: &Field2,
    etap: &Field2,
    out_vx: &mut Field2,
    out_vy: &mut Field2,
) {
    let dx2 = geom.dx * geom.dx;
    let dy2 = geom.dy * geom.dy;
    let dxy = geom.dx * geom.dy;
    out_vx.fill(0.0);
    out_vy.fill(0.0);
    let (ir, jr) = geom.vx_interior();
    for i in ir {
        for j in jr.clone() {
            let eta_a = etap[(i, j)];
            let eta_b = etap[(i, j + 1)];
            let eta1 = etab[(i - 1, j)];
            let eta2 = etab[(i, j)];
            out_vx[(i, j)] = 2.0 * eta_a / dx2 * vx[(i, j - 1)]
                + eta1 / dy2 * vx[(i - 1, j)]
                + (-(eta1 + eta2) / dy2 - 2.0 * (eta_a + eta_b) / dx2) * vx[(i, j)]
                + eta2 / dy2 * vx[(i + 1, j)]
                + 2.0 * eta_b / dx2 * vx[(i, j + 1)]
                + eta1 / dxy * vy[(i - 1, j)]
                - eta2 / dxy * vy[(i, j)]
                - eta1 / dxy * vy[(i - 1, j + 1)]
                + eta2 / dxy * vy[(i, j + 1)];
        }
    }
    let (ir, jr) = geom.vy_interior();
    for i in ir {
        for j in jr.clone() {
            let eta_a = etap[(i, j)];
            let eta_b = etap[(i + 1, j)];
            let eta1 = etab[(i, j - 1)];
            let eta2 = etab[(i, j)];
            out_vy[(i, j)] = 2.0 * eta_a / dy2 * vy[(i - 1, j)]
                + eta1 / dx2 * vy[(i, j - 1)]
                + (-(eta1 + eta2) / dx2 - 2.0 * (eta_a + eta_b) / dy2) * vy[(i, j)]
                + eta2 / dx2 * vy[(i, j + 1)]
                + 2.0 * eta_b / dy2 * vy[(i + 1, j)]
                + eta1 / dxy * vx[(i, j - 1)]
                - eta2 / dxy * vx[(i, j)]
                - eta1 / dxy * vx[(i + 1, j - 1)]
                + eta2 / dxy * vx[(i + 1, j)];
        }
    }
}

/// Discrete pressure gradient (G_x p, G_y p) at the velocity nodes.
pub fn pressure_gradient(geom: &GridGeometry2D, p: &Field2) -> (Field2, Field2) {
    let mut gx = geom.alloc();
    let mut gy = geom.alloc();
    let (ir, jr) = geom.vx_interior();
    for i in ir {
        for j in jr.clone() {
            gx[(i, j)] = (p[(i, j)] - p[(i, j + 1)]) / geom.dx;
        }
    }
    let (ir, jr) = geom.vy_interior();
    for i in ir {
        for j in jr.clone() {
            gy[(i, j)] = (p[(i, j)] - p[(i + 1, j)]) / geom.dy;
        }
    }
    (gx, gy)
}

/// Central-difference divergence at each interior pressure node.
pub fn continuity_apply(geom: &GridGeometry2D, vx: &Field2, vy: &Field2) -> Field2 {
    let mut out = geom.alloc();
    let (ir, jr) = geom.p_interior();
    for i in ir {
        for j in jr.clone() {
            out[(i, j)] = (vx[(i, j)] - vx[(i, j - 1)]) / geom.dx
                + (vy[(i, j)] - vy[(i - 1, j)]) / geom.dy;
        }
    }
    out
}

/// Momentum residual r = f - (L v + G p), interior entries only.
pub fn momentum_residual(
    geom: &GridGeometry2D,
    fields: &FieldSet,
    force: &BodyForce,
) -> (Field2, Field2) {
    let ax = vx_momentum_apply(geom, &fields.vx, &fields.vy, &fields.p, &fields.etab, &fields.etap);
    let ay = vy_momentum_apply(geom, &fields.vx, &fields.vy, &fields.p, &fields.etab, &fields.etap);
    let mut rx = geom.alloc();
    let mut ry = geom.alloc();
    let (ir, jr) = geom.vx_interior();
    for i in ir {
        for j in jr.clone() {
            rx[(i, j)] = force.fx[(i, j)] - ax[(i, j)];
        }
    }
    let (ir, jr) = geom.vy_interior();
    for i in ir {
        for j in jr.clone() {
            ry[(i, j)] = force.fy[(i, j)] - ay[(i, j)];
        }
    }
    (rx, ry)
}

/// Negated center coefficients of the velocity operator: diag(-L), strictly
/// positive for positive viscosities. Used by the smoothers and the velocity
/// energy norm.
pub fn diag_minus_l(geom: &GridGeometry2D, etab: &Field2, etap: &Field2) -> (Field2, Field2) {
    let dx2 = geom.dx * geom.dx;
    let dy2 = geom.dy * geom.dy;
    let mut dvx = geom.alloc();
    let mut dvy = geom.alloc();
    let (ir, jr) = geom.vx_interior();
    for i in ir {
        for j in jr.clone() {
            let eta_a = etap[(i, j)];
            let eta_b = etap[(i, j + 1)];
            let eta1 = etab[(i - 1, j)];
            let eta2 = etab[(i, j)];
            dvx[(i, j)] = (eta1 + eta2) / dy2 + 2.0 * (eta_a + eta_b) / dx2;
        }
    }
    let (ir, jr) = geom.vy_interior();
    for i in ir {
        for j in jr.clone() {
            let eta_a = etap[(i, j)];
            let eta_b = etap[(i + 1, j)];
            let eta1 = etab[(i, j - 1)];
            let eta2 = etab[(i, j)];
            dvy[(i, j)] = (eta1 + eta2) / dx2 + 2.0 * (eta_a + eta_b) / dy2;
        }
    }
    (dvx, dvy)
}

/// Diagonal Schur-complement surrogate at pressure nodes:
/// eta / (2/dx^2 + 2/dy^2).
pub fn schur_diag_surrogate(geom: &GridGeometry2D, etap: &Field2) -> Field2 {
    let denom = 2.0 / (geom.dx * geom.dx) + 2.0 / (geom.dy * geom.dy);
    let mut out = geom.alloc();
    let (ir, jr) = geom.p_interior();
    for i in ir {
        for j in jr.clone() {
            out[(i, j)] = etap[(i, j)] / denom;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualNorms {
    pub res_v: f64,
    pub res_p: f64,
    pub res_total: f64,
}

/// Relative energy residual
/// sqrt((|r_v|^2_{L~^-1} + |r_p|^2_{S~^-1}) / |f|^2_{L~^-1}).
///
/// Sums run over interior unknowns only and accumulate with compensated
/// summation. A zero body-force norm is an error: the normalization is
/// undefined.
#[allow(clippy::too_many_arguments)]
pub fn energy_residual(
    geom: &GridGeometry2D,
    r_vx: &Field2,
    r_vy: &Field2,
    r_p: &Field2,
    diag_vx: &Field2,
    diag_vy: &Field2,
    schur: &Field2,
    force: &BodyForce,
) -> Result<ResidualNorms> {
    let mut rv2 = KahanSum::new();
    let mut f2 = KahanSum::new();
    let (ir, jr) = geom.vx_interior();
    for i in ir {
        for j in jr.clone() {
            let d = diag_vx[(i, j)];
            rv2.add(r_vx[(i, j)] * r_vx[(i, j)] / d);
            f2.add(force.fx[(i, j)] * force.fx[(i, j)] / d);
        }
    }
    let (ir, jr) = geom.vy_interior();
    for i in ir {
        for j in jr.clone() {
            let d = diag_vy[(i, j)];
            rv2.add(r_vy[(i, j)] * r_vy[(i, j)] / d);
            f2.add(force.fy[(i, j)] * force.fy[(i, j)] / d);
        }
    }
    let mut rp2 = KahanSum::new();
    let (ir, jr) = geom.p_interior();
    for i in ir {
        for j in jr.clone() {
            rp2.add(r_p[(i, j)] * r_p[(i, j)] * schur[(i, j)]);
        }
    }
    let f_norm2 = f2.value();
    if !(f_norm2 > 0.0) {
        return Err(Error::UndefinedNormalization);
    }
    let res_v = (rv2.value() / f_norm2).sqrt();
    let res_p = (rp2.value() / f_norm2).sqrt();
    Ok(ResidualNorms {
        res_v,
        res_p,
        res_total: ((rv2.value() + rp2.value()) / f_norm2).sqrt(),
    })
}
