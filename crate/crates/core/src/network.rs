//! Mesh-flux reluctance network.
//!
//! Loop `(k, j)` sits at the corner shared by cells `(k, j)`, `(k, j+1)`,
//! `(k+1, j)` and `(k+1, j+1)`; its flux approximates the axial vector
//! potential there, with zero flux beyond the innermost and outermost rings.
//! Loops are indexed `k * n_al + j` for `k` in `0..n_rl-1`.
//!
//! Branches join the centres of adjacent cells:
//! * radial branch `(k, j)` joins cell `(k, j)` to `(k+1, j)` and carries the
//!   outward flux `Φ(k, j-1) - Φ(k, j)`;
//! * tangential branch `(k, j)` joins cell `(k, j)` to `(k, j+1)` and carries
//!   the counter-clockwise flux `Φ(k, j) - Φ(k-1, j)`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{Materials, MU0};
use crate::mesh::{CellMaterial, PolarMesh};

/// How steel permeability is sampled from the flux solution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermeabilityModel {
    /// Each steel half-tube follows the flux density of its own branch. The
    /// differential matrix is then the exact Jacobian of the residual.
    #[default]
    PerTube,
    /// One permeability per cell from `|B| = sqrt(B_rad² + B_tan²)`, using the
    /// mean of the cell's facing tubes. The differential matrix is approximate.
    PerCell,
}

/// Four half-tube reluctances of a polar cell: inner radial, outer radial,
/// and the two (equal) tangential halves.
pub fn tube_reluctances(r_in: f64, r_out: f64, dtheta: f64, mu: f64, stack: f64) -> [f64; 4] {
    let g = TubeGeometry::new(r_in, r_out, dtheta, stack);
    [
        g.inner / mu,
        g.outer / mu,
        g.tangential / mu,
        g.tangential / mu,
    ]
}

/// Permeability-free parts of the half-tube reluctances of one ring.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TubeGeometry {
    inner: f64,
    outer: f64,
    tangential: f64,
}

impl TubeGeometry {
    fn new(r_in: f64, r_out: f64, dtheta: f64, stack: f64) -> Self {
        let r_c = (r_in * r_out).sqrt();
        TubeGeometry {
            inner: (r_c / r_in).ln() / (dtheta * stack),
            outer: (r_out / r_c).ln() / (dtheta * stack),
            tangential: 0.5 * dtheta / (stack * (r_out / r_in).ln()),
        }
    }
}

/// Which reluctance a stored nonzero takes its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Diag(u32),
    Radial(u32),
    Tangential(u32),
}

/// Sparsity pattern of the loop matrix, shared by every matrix of one topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymPattern {
    n_rings: usize,
    n_al: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    slots: Vec<Slot>,
    /// Upper-triangle positions into the full value array, row by row.
    upper_ptr: Vec<usize>,
    upper_idx: Vec<usize>,
    upper_pos: Vec<usize>,
}

impl SymPattern {
    /// Pattern for `n_rings` loop rings of `n_al` loops each.
    pub fn new(n_rings: usize, n_al: usize) -> Self {
        assert!(n_al >= 3 && n_rings >= 1);
        let n = n_rings * n_al;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(5 * n);
        let mut slots = Vec::with_capacity(5 * n);
        row_ptr.push(0);
        let mut row = Vec::with_capacity(5);
        for k in 0..n_rings {
            for j in 0..n_al {
                let i = k * n_al + j;
                let jp = (j + 1) % n_al;
                let jm = (j + n_al - 1) % n_al;
                row.clear();
                row.push((i, Slot::Diag(i as u32)));
                row.push((k * n_al + jp, Slot::Radial((k * n_al + jp) as u32)));
                row.push((k * n_al + jm, Slot::Radial(i as u32)));
                if k > 0 {
                    row.push(((k - 1) * n_al + j, Slot::Tangential(i as u32)));
                }
                if k + 1 < n_rings {
                    row.push((
                        (k + 1) * n_al + j,
                        Slot::Tangential(((k + 1) * n_al + j) as u32),
                    ));
                }
                row.sort_by_key(|e| e.0);
                for &(c, s) in &row {
                    col_idx.push(c);
                    slots.push(s);
                }
                row_ptr.push(col_idx.len());
            }
        }
        let mut upper_ptr = Vec::with_capacity(n + 1);
        let mut upper_idx = Vec::new();
        let mut upper_pos = Vec::new();
        upper_ptr.push(0);
        for i in 0..n {
            for p in row_ptr[i]..row_ptr[i + 1] {
                if col_idx[p] >= i {
                    upper_idx.push(col_idx[p]);
                    upper_pos.push(p);
                }
            }
            upper_ptr.push(upper_idx.len());
        }
        SymPattern {
            n_rings,
            n_al,
            row_ptr,
            col_idx,
            slots,
            upper_ptr,
            upper_idx,
            upper_pos,
        }
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Column pointers and row indices of the lower triangle in CSC form,
    /// which is the upper triangle read row by row.
    pub fn lower_csc(&self) -> (&[usize], &[usize]) {
        (&self.upper_ptr, &self.upper_idx)
    }

    /// Gathers lower-CSC values from a full value array.
    pub fn lower_values(&self, values: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.upper_pos.iter().map(|&p| values[p]));
    }
}

/// Symmetric sparse matrix in full CSR storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    pattern: Arc<SymPattern>,
    values: Vec<f64>,
}

impl SparseSym {
    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.pattern.row_ptr[i + 1] - self.pattern.row_ptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let p = &self.pattern;
        let row = p.row(i);
        match row.binary_search(&j) {
            Ok(pos) => self.values[p.row_ptr[i] + pos],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let p = &self.pattern;
        (0..p.dim()).flat_map(move |i| {
            (p.row_ptr[i]..p.row_ptr[i + 1]).map(move |q| (i, p.col_idx[q], self.values[q]))
        })
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for q in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.values[q] * x[p.col_idx[q]];
            }
            *yi = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "%%MatrixMarket matrix coordinate real general").map_err(io)?;
        writeln!(w, "{} {} {}", self.dim(), self.dim(), self.pattern.nnz()).map_err(io)?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Per-branch quantities from which both matrices and the MMF vector follow.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchValues {
    /// Radial branch reluctances, `(n_rl - 1) * n_al`.
    pub radial_app: Vec<f64>,
    pub radial_diff: Vec<f64>,
    /// Outward MMF of each radial branch.
    pub radial_mmf: Vec<f64>,
    /// Tangential branch reluctances, `n_rl * n_al`.
    pub tangential_app: Vec<f64>,
    pub tangential_diff: Vec<f64>,
}

/// Assembled mesh-flux system `R(Φ) Φ = f`.
#[derive(Debug, Clone, PartialEq)]
pub struct MecSystem {
    pub n_rl: usize,
    pub n_al: usize,
    pub branches: BranchValues,
    pub r_app: SparseSym,
    pub r_diff: SparseSym,
    pub f: Vec<f64>,
}

impl MecSystem {
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// Flat loop index of loop `(k, j)`.
    pub fn loop_index(&self, k: usize, j: usize) -> usize {
        k * self.n_al + j
    }

    /// Loop `(k, j)` of a flat index.
    pub fn loop_position(&self, i: usize) -> (usize, usize) {
        (i / self.n_al, i % self.n_al)
    }

    /// Residual `R_app Φ - f`.
    pub fn residual(&self, phi: &[f64]) -> Vec<f64> {
        let mut r = self.r_app.mul(phi);
        for (ri, fi) in r.iter_mut().zip(&self.f) {
            *ri -= fi;
        }
        r
    }

    /// Folds a system whose branches repeat every `n_al / symmetry` columns
    /// onto one sector.
    pub fn reduce_symmetry(&self, symmetry: usize) -> Result<MecSystem> {
        if symmetry == 1 {
            return Ok(self.clone());
        }
        if symmetry == 0 || !self.n_al.is_multiple_of(symmetry) {
            return Err(Error::NotPeriodic {
                symmetry,
                detail: format!("{} angular layers are not divisible", self.n_al),
            });
        }
        let period = self.n_al / symmetry;
        if period < 3 {
            return Err(Error::NotPeriodic {
                symmetry,
                detail: format!("a sector of {period} angular layers is too small"),
            });
        }
        let fold = |name: &str, v: &[f64]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(v.len() / symmetry);
            for (row, chunk) in v.chunks(self.n_al).enumerate() {
                for (j, &x) in chunk.iter().enumerate().skip(period) {
                    if x != chunk[j % period] {
                        return Err(Error::NotPeriodic {
                            symmetry,
                            detail: format!("{name} branch ({row}, {j}) differs from its image"),
                        });
                    }
                }
                out.extend_from_slice(&chunk[..period]);
            }
            Ok(out)
        };
        let b = &self.branches;
        let branches = BranchValues {
            radial_app: fold("radial", &b.radial_app)?,
            radial_diff: fold("radial", &b.radial_diff)?,
            radial_mmf: fold("source on radial", &b.radial_mmf)?,
            tangential_app: fold("tangential", &b.tangential_app)?,
            tangential_diff: fold("tangential", &b.tangential_diff)?,
        };
        let pattern = Arc::new(SymPattern::new(self.n_rl - 1, period));
        Ok(build_system(self.n_rl, period, branches, &pattern))
    }

    /// Writes the apparent matrix (Matrix Market) and the MMF vector (CSV).
    pub fn write_dump(&self, matrix: impl AsRef<Path>, rhs: impl AsRef<Path>) -> Result<()> {
        self.r_app.write_matrix_market(matrix)?;
        let path = rhs.as_ref();
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "loop,ring,index,f_A").map_err(io)?;
        for (i, f) in self.f.iter().enumerate() {
            let (k, j) = self.loop_position(i);
            writeln!(w, "{i},{k},{j},{f:e}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn build_system(
    n_rl: usize,
    n_al: usize,
    branches: BranchValues,
    pattern: &Arc<SymPattern>,
) -> MecSystem {
    let mut r_app = SparseSym {
        pattern: pattern.clone(),
        values: Vec::new(),
    };
    let mut r_diff = r_app.clone();
    fill_values(
        pattern,
        &branches.radial_app,
        &branches.tangential_app,
        n_al,
        &mut r_app.values,
    );
    fill_values(
        pattern,
        &branches.radial_diff,
        &branches.tangential_diff,
        n_al,
        &mut r_diff.values,
    );
    let f = loop_mmf(&branches.radial_mmf, n_al);
    MecSystem {
        n_rl,
        n_al,
        branches,
        r_app,
        r_diff,
        f,
    }
}

fn fill_values(
    pattern: &SymPattern,
    radial: &[f64],
    tangential: &[f64],
    n_al: usize,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.extend(pattern.slots.iter().map(|&s| match s {
        Slot::Radial(b) => -radial[b as usize],
        Slot::Tangential(b) => -tangential[b as usize],
        Slot::Diag(i) => {
            let i = i as usize;
            let (k, j) = (i / n_al, i % n_al);
            let jp = k * n_al + (j + 1) % n_al;
            radial[i] + radial[jp] + tangential[i] + tangential[i + n_al]
        }
    }));
}

fn loop_mmf(radial_mmf: &[f64], n_al: usize) -> Vec<f64> {
    (0..radial_mmf.len())
        .map(|i| {
            let (k, j) = (i / n_al, i % n_al);
            radial_mmf[k * n_al + (j + 1) % n_al] - radial_mmf[i]
        })
        .collect()
}

/// Radial branch fluxes (outward), `(n_rl - 1) * n_al`.
pub fn radial_fluxes(phi: &[f64], n_al: usize) -> Vec<f64> {
    (0..phi.len())
        .map(|i| {
            let (k, j) = (i / n_al, i % n_al);
            phi[k * n_al + (j + n_al - 1) % n_al] - phi[i]
        })
        .collect()
}

/// Tangential branch fluxes (counter-clockwise), `n_rl * n_al`.
pub fn tangential_fluxes(phi: &[f64], n_al: usize) -> Vec<f64> {
    let n = phi.len();
    (0..n + n_al)
        .map(|i| {
            let own = if i < n { phi[i] } else { 0.0 };
            let below = if i >= n_al { phi[i - n_al] } else { 0.0 };
            own - below
        })
        .collect()
}

/// Reusable assembler for one mesh topology.
#[derive(Debug, Clone)]
pub struct Network {
    n_rl: usize,
    n_al: usize,
    ring: Vec<TubeGeometry>,
    /// Cross-section of radial branch `k` (at radius `r[k+1]`).
    radial_area: Vec<f64>,
    tangential_area: Vec<f64>,
    pattern: Arc<SymPattern>,
}

/// Permeability settings used during assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub init_mu_r: f64,
    pub model: PermeabilityModel,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            init_mu_r: crate::materials::DEFAULT_INIT_MU_R,
            model: PermeabilityModel::PerTube,
        }
    }
}

impl Network {
    pub fn new(mesh: &PolarMesh) -> Self {
        let r = mesh.radii();
        let (dt, l) = (mesh.dtheta(), mesh.stack());
        let n_rl = mesh.n_rl();
        Network {
            n_rl,
            n_al: mesh.n_al(),
            ring: (0..n_rl)
                .map(|k| TubeGeometry::new(r[k], r[k + 1], dt, l))
                .collect(),
            radial_area: (0..n_rl - 1).map(|k| r[k + 1] * dt * l).collect(),
            tangential_area: (0..n_rl).map(|k| (r[k + 1] - r[k]) * l).collect(),
            pattern: Arc::new(SymPattern::new(n_rl - 1, mesh.n_al())),
        }
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    /// Cross-sectional areas of radial (per loop ring) and tangential (per
    /// cell ring) branches [m²].
    pub fn areas(&self) -> (&[f64], &[f64]) {
        (&self.radial_area, &self.tangential_area)
    }

    fn check(&self, mesh: &PolarMesh) {
        assert!(
            mesh.n_rl() == self.n_rl && mesh.n_al() == self.n_al,
            "mesh topology differs from the network"
        );
    }

    /// Assembles both matrices and the MMF vector. Without `phi` every steel
    /// half-tube takes `init_mu_r`.
    pub fn assemble(
        &self,
        mesh: &PolarMesh,
        materials: &Materials,
        phi: Option<&[f64]>,
        opts: &AssemblyOptions,
    ) -> MecSystem {
        self.check(mesh);
        let branches = self.branch_values(mesh, materials, phi, opts);
        build_system(self.n_rl, self.n_al, branches, &self.pattern)
    }

    /// Re-assembles in place, keeping allocations.
    pub fn reassemble(
        &self,
        sys: &mut MecSystem,
        mesh: &PolarMesh,
        materials: &Materials,
        phi: Option<&[f64]>,
        opts: &AssemblyOptions,
    ) {
        self.check(mesh);
        sys.branches = self.branch_values(mesh, materials, phi, opts);
        let b = &sys.branches;
        fill_values(
            &self.pattern,
            &b.radial_app,
            &b.tangential_app,
            self.n_al,
            &mut sys.r_app.values,
        );
        fill_values(
            &self.pattern,
            &b.radial_diff,
            &b.tangential_diff,
            self.n_al,
            &mut sys.r_diff.values,
        );
        sys.f = loop_mmf(&b.radial_mmf, self.n_al);
    }

    fn branch_values(
        &self,
        mesh: &PolarMesh,
        materials: &Materials,
        phi: Option<&[f64]>,
        opts: &AssemblyOptions,
    ) -> BranchValues {
        let (n_rl, n_al) = (self.n_rl, self.n_al);
        let mu_air = MU0;
        let mu_pm = mesh.magnet().permeability();
        let mu_init = MU0 * opts.init_mu_r;
        let linear_steel = phi.is_none() || materials.steel.is_linear();
        let steel_linear_mu = if phi.is_none() {
            mu_init
        } else {
            materials.steel.mu_apparent(0.0)
        };
        let fixed = |m: CellMaterial| match m {
            CellMaterial::Air => mu_air,
            CellMaterial::Magnet => mu_pm,
            CellMaterial::Steel => steel_linear_mu,
        };

        let (rad_b, tan_b) = match phi {
            Some(phi) if !linear_steel => {
                assert_eq!(phi.len(), self.dim());
                let mut rb = radial_fluxes(phi, n_al);
                for (i, b) in rb.iter_mut().enumerate() {
                    *b /= self.radial_area[i / n_al];
                }
                let mut tb = tangential_fluxes(phi, n_al);
                for (i, b) in tb.iter_mut().enumerate() {
                    *b /= self.tangential_area[i / n_al];
                }
                (rb, tb)
            }
            _ => (Vec::new(), Vec::new()),
        };
        // Per-cell permeability pairs for the cell-averaged model.
        let cell_mu: Vec<(f64, f64)> = if !linear_steel && opts.model == PermeabilityModel::PerCell
        {
            let mut out = Vec::with_capacity(n_rl * n_al);
            for k in 0..n_rl {
                for j in 0..n_al {
                    if mesh.cell(k, j).material != CellMaterial::Steel {
                        out.push((0.0, 0.0));
                        continue;
                    }
                    let inner = if k > 0 {
                        rad_b[(k - 1) * n_al + j]
                    } else {
                        0.0
                    };
                    let outer = if k + 1 < n_rl {
                        rad_b[k * n_al + j]
                    } else {
                        0.0
                    };
                    let left = tan_b[k * n_al + (j + n_al - 1) % n_al];
                    let right = tan_b[k * n_al + j];
                    let br = 0.5 * (inner + outer);
                    let bt = 0.5 * (left + right);
                    out.push(materials.steel.mu_pair(br.hypot(bt)));
                }
            }
            out
        } else {
            Vec::new()
        };
        let steel_mu = |k: usize, j: usize, b: f64| -> (f64, f64) {
            if linear_steel {
                (steel_linear_mu, steel_linear_mu)
            } else if opts.model == PermeabilityModel::PerCell {
                cell_mu[k * n_al + j]
            } else {
                materials.steel.mu_pair(b)
            }
        };

        let nr = (n_rl - 1) * n_al;
        let mut radial_app = Vec::with_capacity(nr);
        let mut radial_diff = Vec::with_capacity(nr);
        let mut radial_mmf = Vec::with_capacity(nr);
        let pm = mesh.magnet();
        for k in 0..n_rl - 1 {
            let (g_lo, g_hi) = (self.ring[k].outer, self.ring[k + 1].inner);
            let r = mesh.radii();
            let r_c_lo = mesh.ring_center(k);
            let r_c_hi = mesh.ring_center(k + 1);
            for j in 0..n_al {
                let lo = mesh.cell(k, j);
                let hi = mesh.cell(k + 1, j);
                let b = if rad_b.is_empty() {
                    0.0
                } else {
                    rad_b[k * n_al + j]
                };
                let mut shared: Option<(f64, f64)> = None;
                let mut mu = |m: CellMaterial, kk: usize| -> (f64, f64) {
                    if m == CellMaterial::Steel && !linear_steel {
                        if opts.model == PermeabilityModel::PerCell {
                            steel_mu(kk, j, b)
                        } else {
                            *shared.get_or_insert_with(|| steel_mu(kk, j, b))
                        }
                    } else {
                        let v = fixed(m);
                        (v, v)
                    }
                };
                let (a_lo, d_lo) = mu(lo.material, k);
                let (a_hi, d_hi) = mu(hi.material, k + 1);
                radial_app.push(g_lo / a_lo + g_hi / a_hi);
                radial_diff.push(g_lo / d_lo + g_hi / d_hi);
                let mut f = 0.0;
                if lo.material == CellMaterial::Magnet {
                    f += pm.mmf(r[k + 1] - r_c_lo, lo.polarity as f64);
                }
                if hi.material == CellMaterial::Magnet {
                    f += pm.mmf(r_c_hi - r[k + 1], hi.polarity as f64);
                }
                radial_mmf.push(f);
            }
        }

        let nt = n_rl * n_al;
        let mut tangential_app = Vec::with_capacity(nt);
        let mut tangential_diff = Vec::with_capacity(nt);
        for k in 0..n_rl {
            let g = self.ring[k].tangential;
            for j in 0..n_al {
                let jp = (j + 1) % n_al;
                let a = mesh.cell(k, j).material;
                let c = mesh.cell(k, jp).material;
                let b = if tan_b.is_empty() {
                    0.0
                } else {
                    tan_b[k * n_al + j]
                };
                let mut shared: Option<(f64, f64)> = None;
                let mut mu = |m: CellMaterial, jj: usize| -> (f64, f64) {
                    if m == CellMaterial::Steel && !linear_steel {
                        if opts.model == PermeabilityModel::PerCell {
                            cell_mu[k * n_al + jj]
                        } else {
                            *shared.get_or_insert_with(|| materials.steel.mu_pair(b))
                        }
                    } else {
                        let v = fixed(m);
                        (v, v)
                    }
                };
                let (a1, d1) = mu(a, j);
                let (a2, d2) = mu(c, jp);
                tangential_app.push(g / a1 + g / a2);
                tangential_diff.push(g / d1 + g / d2);
            }
        }
        BranchValues {
            radial_app,
            radial_diff,
            radial_mmf,
            tangential_app,
            tangential_diff,
        }
    }
}

/// Assembles the system of a mesh in one call.
pub fn assemble(
    mesh: &PolarMesh,
    materials: &Materials,
    phi: Option<&[f64]>,
    opts: &AssemblyOptions,
) -> MecSystem {
    Network::new(mesh).assemble(mesh, materials, phi, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{derive_geometry, GearDesign, Region};
    use crate::materials::{PermanentMagnet, SteelModel};
    use crate::mesh::{build_mesh, MeshConfig, RotorLayout};

    fn hand_mesh() -> PolarMesh {
        let rotors = RotorLayout {
            p1: 1,
            p3: 2,
            q2: 3,
            modulator_fill: 0.5,
            theta1: 0.0,
            theta2: 0.0,
            theta3: 0.0,
        };
        PolarMesh::from_rings(
            vec![0.05, 0.06, 0.07, 0.08],
            vec![Region::Magnets1, Region::InnerGap, Region::Modulators],
            4,
            0.1,
            PermanentMagnet::N42,
            rotors,
        )
        .unwrap()
    }

    #[test]
    fn reluctance_limits() {
        let big = tube_reluctances(0.1, 0.11, 0.1, 1e30, 1.0);
        assert!(big.iter().all(|&r| r > 0.0 && r < 1e-25));
        // series of two stacked cells equals the merged cell
        let (a, b, c) = (0.1, 0.13, 0.17);
        let dt = 0.05;
        let r1 = tube_reluctances(a, b, dt, MU0, 0.3);
        let r2 = tube_reluctances(b, c, dt, MU0, 0.3);
        let merged = tube_reluctances(a, c, dt, MU0, 0.3);
        let stacked = r1[0] + r1[1] + r2[0] + r2[1];
        assert!((stacked - (merged[0] + merged[1])).abs() <= 1e-14 * stacked);
        // thin annulus approaches the slab formula
        let (ri, ro) = (0.1, 0.1 + 1e-6);
        let r = tube_reluctances(ri, ro, dt, MU0, 0.3);
        let slab = (ro - ri) / (MU0 * (ri * ro).sqrt() * dt * 0.3);
        assert!(((r[0] + r[1]) - slab).abs() <= 1e-9 * slab);
        assert_eq!(r[2], r[3]);
    }

    #[test]
    fn hand_assembled_eight_loops() {
        let mesh = hand_mesh();
        let mat = Materials {
            steel: SteelModel::linear(1000.0),
            pm: PermanentMagnet::N42,
        };
        let sys = assemble(&mesh, &mat, None, &AssemblyOptions::default());
        assert_eq!(sys.dim(), 8);
        let r = mesh.radii();
        let dt = mesh.dtheta();
        let l = 0.1;
        let mu_pm = MU0 * 1.05;
        let mu_steel = MU0 * 4000.0;
        // independent per-tube formulas
        let rc = |k: usize| (r[k] * r[k + 1]).sqrt();
        let rad_out = |k: usize, mu: f64| (r[k + 1] / rc(k)).ln() / (mu * dt * l);
        let rad_in = |k: usize, mu: f64| (rc(k) / r[k]).ln() / (mu * dt * l);
        let tan = |k: usize, mu: f64| dt / (mu * l * (r[k + 1] / r[k]).ln());
        let mu_cell = |k: usize, j: usize| match (k, j) {
            (0, _) => mu_pm,
            (1, _) => MU0,
            // modulator cells centred on 0 with fill 1/2 and q2 = 3: centres at 45°, 135°, ...
            (2, j) => {
                if mesh.cell(2, j).material == CellMaterial::Steel {
                    mu_steel
                } else {
                    MU0
                }
            }
            _ => unreachable!(),
        };
        let rr = |k: usize, j: usize| rad_out(k, mu_cell(k, j)) + rad_in(k + 1, mu_cell(k + 1, j));
        let rt = |k: usize, j: usize| {
            0.5 * tan(k, mu_cell(k, j)) + 0.5 * tan(k, mu_cell(k, (j + 1) % 4))
        };
        let idx = |k: usize, j: usize| k * 4 + j;
        let mut dense = DMatrix::<f64>::zeros(8, 8);
        for k in 0..2 {
            for j in 0..4 {
                let i = idx(k, j);
                dense[(i, i)] = rr(k, j) + rr(k, (j + 1) % 4) + rt(k, j) + rt(k + 1, j);
                dense[(i, idx(k, (j + 1) % 4))] = -rr(k, (j + 1) % 4);
                dense[(i, idx(k, (j + 3) % 4))] = -rr(k, j);
                if k == 1 {
                    dense[(i, idx(0, j))] = -rt(1, j);
                } else {
                    dense[(i, idx(1, j))] = -rt(1, j);
                }
            }
        }
        let got = sys.r_app.to_dense();
        for i in 0..8 {
            for j in 0..8 {
                let e = dense[(i, j)];
                assert!(
                    (got[(i, j)] - e).abs() <= 1e-13 * e.abs().max(1.0),
                    "({i},{j})"
                );
            }
        }
        // magnets on ring 0: polarity + on cells 0,1 and - on 2,3 for p1 = 1
        let half = PermanentMagnet::N42.mmf(r[1] - rc(0), 1.0);
        let pol = [1.0, 1.0, -1.0, -1.0];
        for j in 0..4 {
            let e = half * (pol[(j + 1) % 4] - pol[j]);
            assert!((sys.f[idx(0, j)] - e).abs() <= 1e-12 * half);
            assert_eq!(sys.f[idx(1, j)], 0.0);
        }
    }

    #[test]
    fn structure_and_symmetry() {
        let d = GearDesign::base_design_2();
        let g = derive_geometry(&d).unwrap();
        let mesh = build_mesh(&d, &g, &MeshConfig::coarse()).unwrap();
        let mat = Materials::for_design(&d).unwrap();
        let sys = assemble(&mesh, &mat, None, &AssemblyOptions::default());
        let n_al = mesh.n_al();
        let n = sys.dim();
        assert_eq!(n, mesh.loop_count());
        for i in 0..n {
            let expect = if i < n_al || i >= n - n_al { 4 } else { 5 };
            assert_eq!(sys.r_app.row_nnz(i), expect);
            assert!(sys.r_app.get(i, i) > 0.0);
        }
        for (i, j, v) in sys.r_app.triplets() {
            assert_eq!(v.to_bits(), sys.r_app.get(j, i).to_bits());
        }
        assert_eq!(sys.r_app, sys.r_diff);
    }

    #[test]
    fn sourceless_mesh_has_zero_rhs() {
        let mut mesh = hand_mesh();
        mesh.set_magnet(PermanentMagnet::new(0.0, 1.05).unwrap());
        let mat = Materials {
            steel: SteelModel::m250_like(),
            pm: PermanentMagnet::N42,
        };
        let sys = assemble(&mesh, &mat, None, &AssemblyOptions::default());
        assert!(sys.f.iter().all(|&f| f == 0.0));
        assert!(sys.residual(&[0.0; 8]).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn reduce_matches_sector_assembly() {
        let d = GearDesign::base_design_2();
        let g = derive_geometry(&d).unwrap();
        let mesh = build_mesh(&d, &g, &MeshConfig::coarse()).unwrap();
        let mat = Materials::for_design(&d).unwrap();
        let opts = AssemblyOptions::default();
        let full = assemble(&mesh, &mat, None, &opts);
        let reduced = full.reduce_symmetry(2).unwrap();
        let sector = assemble(&mesh.sector(2).unwrap(), &mat, None, &opts);
        assert_eq!(reduced, sector);
        assert_eq!(reduced.dim() * 2, full.dim());
        assert_eq!(full.reduce_symmetry(1).unwrap(), full);
        assert!(full.reduce_symmetry(3).is_err());

        let mut shifted = mesh.clone();
        shifted.set_rotor_angles(0.3 * mesh.dtheta() + 0.01, 0.0, 0.0);
        let asym = assemble(&shifted, &mat, None, &opts);
        // a rotation by a non-multiple of the sector still keeps periodicity
        assert!(asym.reduce_symmetry(2).is_ok());
        let bd1 = GearDesign::base_design_1();
        let m1 = build_mesh(&bd1, &derive_geometry(&bd1).unwrap(), &MeshConfig::coarse()).unwrap();
        let s1 = assemble(&m1, &Materials::for_design(&bd1).unwrap(), None, &opts);
        assert!(matches!(
            s1.reduce_symmetry(2),
            Err(Error::NotPeriodic { .. })
        ));
    }

    #[test]
    fn stack_scaling() {
        let mesh = hand_mesh();
        let mat = Materials {
            steel: SteelModel::linear(500.0),
            pm: PermanentMagnet::N42,
        };
        let opts = AssemblyOptions::default();
        let a = assemble(&mesh, &mat, None, &opts);
        let scaled = PolarMesh::from_rings(
            mesh.radii().to_vec(),
            mesh.ring_regions().to_vec(),
            4,
            0.3,
            PermanentMagnet::N42,
            *mesh.rotors(),
        )
        .unwrap();
        let b = assemble(&scaled, &mat, None, &opts);
        assert_eq!(a.f, b.f);
        for (x, y) in a.r_app.values().iter().zip(b.r_app.values()) {
            assert!((x / 3.0 - y).abs() <= 1e-14 * x.abs());
        }
    }

    #[test]
    fn matrix_dump() {
        let sys = assemble(
            &hand_mesh(),
            &Materials {
                steel: SteelModel::linear(10.0),
                pm: PermanentMagnet::N42,
            },
            None,
            &AssemblyOptions::default(),
        );
        let dir = tempfile::tempdir().unwrap();
        let (m, f) = (dir.path().join("r.mtx"), dir.path().join("f.csv"));
        sys.write_dump(&m, &f).unwrap();
        let text = std::fs::read_to_string(m).unwrap();
        let nnz = sys.r_app.pattern().nnz();
        assert_eq!(text.lines().count(), 2 + nnz);
        assert_eq!(std::fs::read_to_string(f).unwrap().lines().count(), 9);
    }
}
