//! Linear solvers for the symmetric positive definite systems
//! `(Λ + L_w) x = b` that arise from the smoothing energy.

/// Sparse symmetric system restricted to one connected block: diagonal
/// entries plus off-diagonal couplings stored per row.
pub(crate) struct Block {
    pub diag: Vec<f64>,
    /// For each row, `(column, weight)` with the matrix entry being `-weight`.
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.neighbors.iter().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for &(j, w) in row {
                acc -= w * x[j];
            }
            out[i] = acc;
        }
    }

    fn dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.diag[i];
            for &(j, w) in &self.neighbors[i] {
                a[i * n + j] -= w;
            }
        }
        a
    }
}

/// In-place Cholesky factorization of a dense row-major SPD matrix; the lower
/// triangle receives `L`. Returns `None` if a pivot is not positive.
fn cholesky(a: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Solves the block for several right-hand sides with one dense Cholesky
/// factorization.
pub(crate) fn solve_dense(block: &Block, rhs: &[&[f64]]) -> Option<Vec<Vec<f64>>> {
    let n = block.len();
    let mut a = block.dense();
    cholesky(&mut a, n)?;
    Some(rhs.iter().map(|b| cholesky_solve(&a, n, b)).collect())
}

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient. Stops when the 2-norm of the
/// recursive residual drops to `tol` or after `max_iter` iterations.
pub(crate) fn solve_pcg(block: &Block, b: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> CgOutcome {
    let n = block.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    block.apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&block.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut iterations = 0;
    while iterations < max_iter {
        if dot(&r, &r).sqrt() <= tol {
            return CgOutcome {
                x,
                iterations,
                converged: true,
            };
        }
        block.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] / block.diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
    let converged = dot(&r, &r).sqrt() <= tol;
    CgOutcome {
        x,
        iterations,
        converged,
    }
}
