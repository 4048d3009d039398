use super::{Bc, Grid, ScalarField, VectorField, MIN_CELLS};
use crate::error::{Error, Result};

fn check_grid(g: &Grid) -> Result<()> {
    for k in 0..g.dim() {
        let cells = g.axis(k).map_or(0, |a| a.cells);
        if cells < MIN_CELLS {
            return Err(Error::GridTooSmall {
                min: MIN_CELLS,
                got: cells,
            });
        }
    }
    Ok(())
}

/// Edge differences of a nodal field. `out[k]` must have `grid.edge_len(k)`
/// entries.
pub(crate) fn gradient_into(g: &Grid, f: &[f64], out: &mut [Vec<f64>]) {
    let nx = g.nx();
    let cx = g.x.cells;
    let inv_hx = 1.0 / g.hx();
    for j in 0..g.ny() {
        let row = &f[j * nx..(j + 1) * nx];
        let dst = &mut out[0][j * cx..(j + 1) * cx];
        for i in 0..cx {
            dst[i] = (row[i + 1] - row[i]) * inv_hx;
        }
    }
    if let Some(ay) = g.y {
        let inv_hy = 1.0 / ay.spacing();
        for j in 0..ay.cells {
            for i in 0..nx {
                out[1][i + j * nx] = (f[i + (j + 1) * nx] - f[i + j * nx]) * inv_hy;
            }
        }
    }
}

#[inline]
fn ghost_sign(bc: Bc) -> Result<f64> {
    match bc {
        Bc::Dirichlet0 => Ok(-1.0),
        Bc::Neumann0 => Ok(1.0),
        Bc::None => Err(Error::MissingBoundaryCondition),
    }
}

/// Nodal divergence of a staggered field. The ghost edge beyond the boundary
/// is `sign * (first interior edge)`; `sign = -1` encodes zero normal flux.
pub(crate) fn divergence_into(g: &Grid, comps: &[Vec<f64>], bc: &[Bc], out: &mut [f64]) -> Result<()> {
    let nx = g.nx();
    let cx = g.x.cells;
    let sx = ghost_sign(bc[0])?;
    let inv_hx = 1.0 / g.hx();
    for j in 0..g.ny() {
        let u = &comps[0][j * cx..(j + 1) * cx];
        let dst = &mut out[j * nx..(j + 1) * nx];
        dst[0] = (u[0] - sx * u[0]) * inv_hx;
        for i in 1..cx {
            dst[i] = (u[i] - u[i - 1]) * inv_hx;
        }
        dst[cx] = (sx * u[cx - 1] - u[cx - 1]) * inv_hx;
    }
    if let Some(ay) = g.y {
        let sy = ghost_sign(bc[1])?;
        let cy = ay.cells;
        let inv_hy = 1.0 / ay.spacing();
        let v = &comps[1];
        for i in 0..nx {
            out[i] += (v[i] - sy * v[i]) * inv_hy;
            out[i + cy * nx] += (sy * v[i + (cy - 1) * nx] - v[i + (cy - 1) * nx]) * inv_hy;
        }
        for j in 1..cy {
            for i in 0..nx {
                out[i + j * nx] += (v[i + j * nx] - v[i + (j - 1) * nx]) * inv_hy;
            }
        }
    }
    Ok(())
}

/// Compact Laplacian with ghost-point boundary handling per axis. Nodes on a
/// Dirichlet boundary map to zero.
pub(crate) fn apply_laplacian(g: &Grid, bc: [Bc; 2], f: &[f64], out: &mut [f64]) -> Result<()> {
    let nx = g.nx();
    let cx = g.x.cells;
    let ihx2 = 1.0 / (g.hx() * g.hx());
    if bc[0] == Bc::None {
        return Err(Error::MissingBoundaryCondition);
    }
    for j in 0..g.ny() {
        let r = &f[j * nx..(j + 1) * nx];
        let dst = &mut out[j * nx..(j + 1) * nx];
        dst[0] = 2.0 * (r[1] - r[0]) * ihx2;
        for i in 1..cx {
            dst[i] = (r[i - 1] - 2.0 * r[i] + r[i + 1]) * ihx2;
        }
        dst[cx] = 2.0 * (r[cx - 1] - r[cx]) * ihx2;
    }
    if let Some(ay) = g.y {
        if bc[1] == Bc::None {
            return Err(Error::MissingBoundaryCondition);
        }
        let cy = ay.cells;
        let ihy2 = 1.0 / (ay.spacing() * ay.spacing());
        for i in 0..nx {
            out[i] += 2.0 * (f[i + nx] - f[i]) * ihy2;
            out[i + cy * nx] += 2.0 * (f[i + (cy - 1) * nx] - f[i + cy * nx]) * ihy2;
        }
        for j in 1..cy {
            for i in 0..nx {
                let k = i + j * nx;
                out[k] += (f[k - nx] - 2.0 * f[k] + f[k + nx]) * ihy2;
            }
        }
        if bc[1] == Bc::Dirichlet0 {
            for i in 0..nx {
                out[i] = 0.0;
                out[i + cy * nx] = 0.0;
            }
        }
    }
    if bc[0] == Bc::Dirichlet0 {
        for j in 0..g.ny() {
            out[j * nx] = 0.0;
            out[j * nx + cx] = 0.0;
        }
    }
    Ok(())
}

/// Edge-centered differences of `f`; second order at the edge midpoints.
pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    check_grid(&f.grid)?;
    let mut out = VectorField::zeros(f.grid);
    gradient_into(&f.grid, &f.values, &mut out.components);
    Ok(out)
}

pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    let g = v.grid;
    check_grid(&g)?;
    if v.components.len() != g.dim() || v.bc.len() != g.dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector field has {} components on a {}D grid",
            v.components.len(),
            g.dim()
        )));
    }
    for (k, c) in v.components.iter().enumerate() {
        if c.len() != g.edge_len(k) {
            return Err(Error::DimensionMismatch(format!(
                "component {k} has {} values, expected {}",
                c.len(),
                g.edge_len(k)
            )));
        }
    }
    let mut out = ScalarField::zeros(g, Bc::None);
    divergence_into(&g, &v.components, &v.bc, &mut out.values)?;
    Ok(out)
}

pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    check_grid(&f.grid)?;
    let mut out = ScalarField::zeros(f.grid, Bc::None);
    out.bc = f.bc;
    apply_laplacian(&f.grid, f.bc, &f.values, &mut out.values)?;
    Ok(out)
}
