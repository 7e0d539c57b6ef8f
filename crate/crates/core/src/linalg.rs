//! Sparse factorizations, graph colouring and a shift-invert Lanczos solver.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("eigensolver did not converge: {0}")]
    Eigen(String),
}

/// Square sparse matrix in compressed rows.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub n: usize,
    pub start: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut start = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = (usize::MAX, usize::MAX);
        for (r, c, v) in t {
            if (r, c) == last {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                start[r + 1] += 1;
                last = (r, c);
            }
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        Csr { n, start, col, val }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.start[i]..self.start[i + 1]).map(move |k| (self.col[k], self.val[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n).flat_map(|i| self.row(i).map(move |(c, v)| (i, c, v))).collect()
    }

    /// Max over entries of `|a_ij - a_ji|`, relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.val.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, LinalgError> {
        let t: Vec<Triplet<usize, usize, f64>> =
            self.triplets().into_iter().map(|(row, col, val)| Triplet { row, col, val }).collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).map_err(|e| LinalgError::Factorization(format!("{e:?}")))
    }
}

/// LU factorization of a general sparse matrix.
pub struct LuSolver {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl LuSolver {
    pub fn new(a: &Csr) -> Result<Self, LinalgError> {
        let m = a.to_faer()?;
        let lu = m.sp_lu().map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(LuSolver { lu, n: a.n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(x.as_mut());
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Cholesky factorization of a symmetric positive definite sparse matrix.
pub struct CholSolver {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl CholSolver {
    pub fn new(a: &Csr) -> Result<Self, LinalgError> {
        let m = a.to_faer()?;
        let llt = m.sp_cholesky(Side::Lower).map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(CholSolver { llt, n: a.n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(x.as_mut());
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Greedy colouring of vertex groups so that no two groups of one colour
/// are within graph distance 2 of each other.
pub fn distance2_colouring(groups: &[Vec<usize>], neighbors: impl Fn(usize) -> Vec<usize>, n: usize) -> Vec<Vec<usize>> {
    let mut owner = vec![usize::MAX; n];
    for (g, vs) in groups.iter().enumerate() {
        for &v in vs {
            owner[v] = g;
        }
    }
    let mut colour = vec![usize::MAX; groups.len()];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut mark: Vec<usize> = Vec::new();
    for g in 0..groups.len() {
        mark.clear();
        for &v in &groups[g] {
            for w in neighbors(v) {
                for x in neighbors(w).into_iter().chain(std::iter::once(w)) {
                    let o = owner[x];
                    if o != usize::MAX && o != g && colour[o] != usize::MAX {
                        mark.push(colour[o]);
                    }
                }
            }
        }
        mark.sort_unstable();
        mark.dedup();
        let mut c = 0;
        for &m in &mark {
            if m == c {
                c += 1;
            } else if m > c {
                break;
            }
        }
        colour[g] = c;
        if c == classes.len() {
            classes.push(Vec::new());
        }
        classes[c].push(g);
    }
    classes
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest `m` eigenpairs of a symmetric operator by Lanczos with full
/// reorthogonalization. Start vector from a fixed seed.
pub fn lanczos_largest(op: impl Fn(&[f64]) -> Vec<f64>, n: usize, m: usize, max_dim: usize, tol: f64, seed: u64) -> Result<EigenPairs, LinalgError> {
    let m = m.min(n);
    let max_dim = max_dim.min(n).max(m);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nq = dotv(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let k = basis.len() - 1;
        let mut w = op(&basis[k]);
        let a = dotv(&w, &basis[k]);
        alpha.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = dotv(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bnorm = dotv(&w, &w).sqrt();
        let dim = alpha.len();
        let check = dim >= m && (dim % 5 == 0 || dim == max_dim || bnorm < 1e-14);
        if check {
            let t = nalgebra::DMatrix::from_fn(dim, dim, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = nalgebra::SymmetricEigen::new(t);
            let mut idx: Vec<usize> = (0..dim).collect();
            idx.sort_by(|&x, &y| eig.eigenvalues[y].partial_cmp(&eig.eigenvalues[x]).unwrap());
            let top = &idx[..m];
            let scale = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
            let converged = top.iter().all(|&c| (bnorm * eig.eigenvectors[(dim - 1, c)]).abs() <= tol * scale);
            if converged || dim == max_dim || bnorm < 1e-14 {
                if !converged && bnorm >= 1e-14 {
                    return Err(LinalgError::Eigen(format!("{m} pairs not converged in {dim} steps")));
                }
                let values = top.iter().map(|&c| eig.eigenvalues[c]).collect();
                let vectors = top
                    .iter()
                    .map(|&c| {
                        let mut v = vec![0.0; n];
                        for (j, b) in basis.iter().enumerate() {
                            let s = eig.eigenvectors[(j, c)];
                            v.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
                        }
                        v
                    })
                    .collect();
                return Ok(EigenPairs { values, vectors });
            }
        }
        if bnorm < 1e-14 {
            return Err(LinalgError::Eigen("Krylov space collapsed".into()));
        }
        beta.push(bnorm);
        w.iter_mut().for_each(|x| *x /= bnorm);
        basis.push(w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        Csr::from_triplets(n, t)
    }

    #[test]
    fn lu_and_cholesky_solve() {
        let a = laplace_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x);
        let lu = LuSolver::new(&a).unwrap().solve(&b);
        let ch = CholSolver::new(&a).unwrap().solve(&b);
        for i in 0..50 {
            assert!((lu[i] - x[i]).abs() < 1e-10);
            assert!((ch[i] - x[i]).abs() < 1e-10);
        }
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.val.len(), 2);
    }

    #[test]
    fn shift_invert_lanczos_matches_analytic() {
        let n = 200;
        let a = laplace_1d(n);
        let ch = CholSolver::new(&a).unwrap();
        let eig = lanczos_largest(|x| ch.solve(x), n, 4, 120, 1e-10, 1).unwrap();
        for (k, mu) in eig.values.iter().enumerate() {
            let lam = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((1.0 / mu - lam).abs() < 1e-8 * lam.max(1.0), "{k}: {} vs {lam}", 1.0 / mu);
        }
    }

    #[test]
    fn colouring_separates_two_rings() {
        // path graph 0-1-2-...-9
        let nb = |v: usize| {
            let mut r = Vec::new();
            if v > 0 {
                r.push(v - 1)
            }
            if v < 9 {
                r.push(v + 1)
            }
            r
        };
        let groups: Vec<Vec<usize>> = (0..10).map(|i| vec![i]).collect();
        let classes = distance2_colouring(&groups, nb, 10);
        for c in &classes {
            for &a in c {
                for &b in c {
                    assert!(a == b || (a as i64 - b as i64).abs() > 2);
                }
            }
        }
        assert_eq!(classes.len(), 3);
    }
}
