use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bivariate::BivariateCopulaSpec;
use super::RosenblattAux;
use crate::error::{invalid, Error, Result};
use crate::rng::{domain, par_chunks, SeedSpec, Stream};
use crate::special::StudentT;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultivariateTSpec {
    pub sigma: Vec<Vec<f64>>,
    pub nu: u32,
}

impl MultivariateTSpec {
    pub fn dimension(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu < 3 {
            return Err(invalid(format!("multivariate t needs nu >= 3, got {}", self.nu)));
        }
        check_correlation(&self.sigma)?;
        self.cholesky().map(|_| ())
    }

    /// Row-major lower Cholesky factor.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        cholesky_lower(&self.sigma)
    }

    /// The bivariate margin of coordinates `i` and `j`.
    pub fn pair(&self, i: usize, j: usize) -> BivariateCopulaSpec {
        BivariateCopulaSpec::StudentT { r: self.sigma[i][j], nu: self.nu }
    }
}

/// Checks squareness, symmetry to 1e-12 and a unit diagonal.
pub fn check_correlation(m: &[Vec<f64>]) -> Result<()> {
    let d = m.len();
    if d == 0 {
        return Err(invalid("correlation matrix is empty"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != d {
            return Err(invalid(format!("correlation matrix row {i} has {} entries, expected {d}", row.len())));
        }
        if (row[i] - 1.0).abs() > SYMMETRY_TOL {
            return Err(invalid(format!("correlation matrix diagonal entry {i} is {}", row[i])));
        }
        for j in 0..i {
            if (row[j] - m[j][i]).abs() > SYMMETRY_TOL || !row[j].is_finite() {
                return Err(invalid(format!("correlation matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let d = m.len();
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

fn smallest_eigenvalue(m: &[Vec<f64>]) -> f64 {
    to_matrix(m).symmetric_eigenvalues().min()
}

pub(crate) fn cholesky_lower(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = m.len();
    let chol = to_matrix(m)
        .cholesky()
        .ok_or_else(|| invalid(format!("matrix is not positive definite (smallest eigenvalue {:.6e})", smallest_eigenvalue(m))))?;
    let l = chol.l();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            out[i * d + j] = l[(i, j)];
        }
    }
    Ok(out)
}

/// Joint correlation of (X, Z) for the one-factor credit model: X-block with
/// `lambda` off the diagonal, Z-block `r`, cross entries √(λ/β)·(row sum of R)
/// with β the sum of all entries of R.
pub fn build_factor_sigma(r: &[Vec<f64>], lambda: f64, m: usize, nu: u32) -> Result<MultivariateTSpec> {
    check_correlation(r)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(invalid(format!("factor loading lambda {lambda} must lie in (0, 1)")));
    }
    let n = r.len();
    let beta: f64 = r.iter().flatten().sum();
    let scale = (lambda / beta).sqrt();
    let d = m + n;
    let mut sigma = vec![vec![0.0; d]; d];
    for i in 0..m {
        for j in 0..m {
            sigma[i][j] = if i == j { 1.0 } else { lambda };
        }
        for k in 0..n {
            let cross = scale * r[k].iter().sum::<f64>();
            sigma[i][m + k] = cross;
            sigma[m + k][i] = cross;
        }
    }
    for k in 0..n {
        for l in 0..n {
            sigma[m + k][m + l] = r[k][l];
        }
    }
    let min_eig = smallest_eigenvalue(&sigma);
    if min_eig <= 0.0 {
        return Err(invalid(format!("factor correlation matrix is not positive definite: smallest eigenvalue {min_eig:.6e}")));
    }
    Ok(MultivariateTSpec { sigma, nu })
}

/// Reads a square correlation matrix from CSV; a non-numeric first row is a header.
pub fn load_correlation_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(invalid(format!("{}: row {}: {e}", path.display(), idx + 1))),
        }
    }
    check_correlation(&rows)?;
    Ok(rows)
}

/// Prepared sampler for a multivariate t copula.
#[derive(Clone, Debug)]
pub struct MvtEngine {
    pub(crate) spec: MultivariateTSpec,
    dim: usize,
    chol: Vec<f64>,
    pub(crate) t: StudentT,
    cond: Vec<ConditionalFactor>,
}

/// Gaussian part of the conditional law given one coordinate.
#[derive(Clone, Debug)]
struct ConditionalFactor {
    slope: Vec<f64>,
    chol: Vec<f64>,
}

impl MvtEngine {
    pub fn new(spec: &MultivariateTSpec) -> Result<Self> {
        spec.validate()?;
        let dim = spec.dimension();
        let chol = spec.cholesky()?;
        let mut cond = Vec::with_capacity(dim);
        for j in 0..dim {
            let others: Vec<usize> = (0..dim).filter(|&k| k != j).collect();
            let slope: Vec<f64> = others.iter().map(|&k| spec.sigma[k][j]).collect();
            let schur: Vec<Vec<f64>> = others
                .iter()
                .enumerate()
                .map(|(a, &k)| others.iter().enumerate().map(|(b, &l)| spec.sigma[k][l] - slope[a] * slope[b]).collect())
                .collect();
            let chol = if schur.is_empty() { Vec::new() } else { cholesky_lower(&schur)? };
            cond.push(ConditionalFactor { slope, chol });
        }
        Ok(MvtEngine { spec: spec.clone(), dim, chol, t: StudentT::new(f64::from(spec.nu)), cond })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nu(&self) -> f64 {
        f64::from(self.spec.nu)
    }

    pub fn corr(&self, i: usize, j: usize) -> f64 {
        self.spec.sigma[i][j]
    }

    fn chi_square(s: &mut Stream, dof: u32) -> f64 {
        (0..dof).map(|_| s.normal().powi(2)).sum()
    }

    /// Fills scores and uniforms; returns the mixing variable W = ν/χ²_ν.
    pub fn draw(&self, s: &mut Stream, scores: &mut [f64], u: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut normals = [0.0f64; 64];
        let mut heap;
        let z: &mut [f64] = if d <= 64 {
            &mut normals[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for v in z.iter_mut() {
            *v = s.normal();
        }
        let w = self.nu() / Self::chi_square(s, self.spec.nu);
        let sw = w.sqrt();
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            let g: f64 = row.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            scores[i] = sw * g;
            u[i] = self.t.cdf(scores[i]);
        }
        w
    }

    /// Draws every coordinate except `j` from the law conditional on score `yj`.
    pub fn draw_conditional(&self, s: &mut Stream, j: usize, yj: f64, scores: &mut [f64], u: &mut [f64]) {
        let d = self.dim;
        let cf = &self.cond[j];
        let m = d - 1;
        let z: Vec<f64> = (0..m).map(|_| s.normal()).collect();
        let nu = self.nu();
        let w = (nu + 1.0) / Self::chi_square(s, self.spec.nu + 1);
        let scale = (w * (nu + yj * yj) / (nu + 1.0)).sqrt();
        let mut a = 0;
        for k in 0..d {
            if k == j {
                scores[k] = yj;
                continue;
            }
            let row = &cf.chol[a * m..a * m + a + 1];
            let g: f64 = row.iter().zip(z.iter()).map(|(x, y)| x * y).sum();
            scores[k] = cf.slope[a] * yj + scale * g;
            a += 1;
        }
        for k in 0..d {
            u[k] = self.t.cdf(scores[k]);
        }
    }
}

/// Samples `n` rows of copula uniforms with standard InvGamma(ν/2, ν/2) mixing.
pub fn sample_mvt(spec: &MultivariateTSpec, n: usize, seed: SeedSpec) -> Result<(Vec<Vec<f64>>, RosenblattAux)> {
    let engine = MvtEngine::new(spec)?;
    let d = engine.dim();
    let chunks = par_chunks(n, seed, domain::SAMPLE, |s, rows| {
        let len = rows.len();
        let mut u = vec![0.0; len * d];
        let mut y = vec![0.0; len * d];
        let mut w = vec![0.0; len];
        for r in 0..len {
            w[r] = engine.draw(s, &mut y[r * d..(r + 1) * d], &mut u[r * d..(r + 1) * d]);
        }
        Ok::<_, Error>((u, y, w))
    })?;
    let mut uniforms = vec![Vec::with_capacity(n); d];
    let mut scores = vec![Vec::with_capacity(n); d];
    let mut mixing = Vec::with_capacity(n);
    for (u, y, w) in chunks {
        for r in 0..w.len() {
            for k in 0..d {
                uniforms[k].push(u[r * d + k]);
                scores[k].push(y[r * d + k]);
            }
        }
        mixing.extend(w);
    }
    let aux = RosenblattAux { uniforms: uniforms.clone(), scores: Some(scores), mixing: Some(mixing) };
    Ok((uniforms, aux))
}
