//! Sparse Cholesky with a reusable symbolic analysis, and a dense LU oracle.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{MatMut, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{MecSystem, SparseSym, SymPattern};

/// Largest system the dense oracle accepts.
pub const DENSE_ORACLE_LIMIT: usize = 5000;

/// Symbolic Cholesky analysis of one sparsity pattern.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    pattern: Arc<SymPattern>,
    structure: SymbolicSparseColMat<usize>,
    symbolic: SymbolicLlt<usize>,
}

/// Numeric factor of one matrix.
#[derive(Debug)]
pub struct CholeskyFactor {
    llt: Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn analyze(pattern: &Arc<SymPattern>) -> Result<Self> {
        let n = pattern.dim();
        let (col_ptr, row_idx) = pattern.lower_csc();
        let structure =
            SymbolicSparseColMat::new_checked(n, n, col_ptr.to_vec(), None, row_idx.to_vec());
        let symbolic = SymbolicLlt::try_new(structure.as_ref(), Side::Lower)
            .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))?;
        Ok(SparseCholesky {
            pattern: pattern.clone(),
            structure,
            symbolic,
        })
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    /// Numeric factorization of a matrix sharing the analysed pattern.
    pub fn factor(&self, m: &SparseSym) -> Result<CholeskyFactor> {
        assert!(
            Arc::ptr_eq(m.pattern(), &self.pattern) || **m.pattern() == *self.pattern,
            "matrix pattern differs from the analysed one"
        );
        let mut lower = Vec::new();
        self.pattern.lower_values(m.values(), &mut lower);
        let mat = SparseColMatRef::new(self.structure.as_ref(), &lower);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Lower)
            .map_err(|e| Error::Factorization(format!("matrix is not positive definite: {e:?}")))?;
        Ok(CholeskyFactor { llt })
    }
}

impl CholeskyFactor {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let view = MatMut::from_column_major_slice_mut(rhs, n, 1);
        self.llt.solve_in_place(view);
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// One-shot sparse solve of `A x = b`.
pub fn sparse_solve(a: &SparseSym, b: &[f64]) -> Result<Vec<f64>> {
    Ok(SparseCholesky::analyze(a.pattern())?.factor(a)?.solve(b))
}

/// Dense LU solve of `A x = b`; ground truth for the sparse path in tests.
pub fn dense_solve(a: &SparseSym, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            size: n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let lu = a.to_dense().lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::Factorization("dense LU found a singular matrix".into()))
}

/// Solves `R_app Φ = f` densely.
pub fn dense_oracle_solve(system: &MecSystem) -> Result<Vec<f64>> {
    dense_solve(&system.r_app, &system.f)
}

/// Dense copy helper for small diagnostics.
pub fn to_dense(a: &SparseSym) -> DMatrix<f64> {
    a.to_dense()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use crate::materials::{Materials, PermanentMagnet, SteelModel};
    use crate::mesh::{PolarMesh, RotorLayout};
    use crate::network::{assemble, AssemblyOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(seed: u64, rings: usize, n_al: usize) -> MecSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut radii = vec![0.02];
        for _ in 0..rings {
            let last = *radii.last().unwrap();
            radii.push(last + rng.random_range(0.0005..0.01));
        }
        let regions: Vec<Region> = (0..rings)
            .map(|_| {
                [
                    Region::Magnets1,
                    Region::InnerGap,
                    Region::Modulators,
                    Region::BackIron1,
                ][rng.random_range(0..4)]
            })
            .collect();
        let rotors = RotorLayout {
            p1: rng.random_range(1..4),
            p3: 7,
            q2: rng.random_range(2..9),
            modulator_fill: 0.5,
            theta1: rng.random_range(0.0..1.0),
            theta2: rng.random_range(0.0..1.0),
            theta3: 0.0,
        };
        let mesh = PolarMesh::from_rings(radii, regions, n_al, 0.05, PermanentMagnet::N42, rotors)
            .unwrap();
        let mat = Materials {
            steel: SteelModel::linear(rng.random_range(100.0..5000.0)),
            pm: PermanentMagnet::N42,
        };
        assemble(&mesh, &mat, None, &AssemblyOptions::default())
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sys = random_system(1, 4, 12);
        let zero = vec![0.0; sys.dim()];
        assert!(sparse_solve(&sys.r_app, &zero)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        assert!(dense_solve(&sys.r_app, &zero)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn sparse_matches_dense() {
        for seed in 0..5 {
            let sys = random_system(seed, 6, 24);
            let s = sparse_solve(&sys.r_app, &sys.f).unwrap();
            let d = dense_oracle_solve(&sys).unwrap();
            let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in s.iter().zip(&d) {
                assert!((a - b).abs() <= 1e-10 * scale, "seed {seed}");
            }
        }
    }

    #[test]
    fn symbolic_reuse() {
        let a = random_system(7, 5, 16);
        let chol = SparseCholesky::analyze(a.r_app.pattern()).unwrap();
        let x1 = chol.factor(&a.r_app).unwrap().solve(&a.f);
        let x2 = sparse_solve(&a.r_app, &a.f).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn oracle_guard() {
        let sys = random_system(3, 3, 2600);
        assert!(matches!(
            dense_oracle_solve(&sys),
            Err(Error::OracleTooLarge { size: 5200, .. })
        ));
    }
}
