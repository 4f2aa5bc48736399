use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Factor, LossModel, LossModelSpec};
use crate::copula::RosenblattAux;
use crate::error::{invalid, Error, Result};
use crate::rng::{domain, par_chunks, SeedSpec, Stream};
use crate::stress::StressSpec;

/// Stressed re-simulation: only the target moves, or the move propagates
/// through the dependence structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Marginal,
    Cascade,
}

/// Simulated draws, column-major. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    pub n_scenarios: usize,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
    pub aux: RosenblattAux,
    pub seed: SeedSpec,
    pub model_hash: String,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.n_scenarios
    }

    pub fn is_empty(&self) -> bool {
        self.n_scenarios == 0
    }

    pub fn row(&self, r: usize, x: &mut [f64], z: &mut [f64]) {
        for (j, col) in self.x.iter().enumerate() {
            x[j] = col[r];
        }
        for (k, col) in self.z.iter().enumerate() {
            z[k] = col[r];
        }
    }

    pub fn value(&self, f: Factor, r: usize) -> f64 {
        match f {
            Factor::X(i) => self.x[i][r],
            Factor::Z(k) => self.z[k][r],
        }
    }

    /// Uniforms and (when present) scores of a row over the combined coordinates.
    pub fn latents(&self, r: usize, u: &mut [f64], y: &mut [f64]) {
        for (k, col) in self.aux.uniforms.iter().enumerate() {
            u[k] = col[r];
        }
        if let Some(scores) = &self.aux.scores {
            for (k, col) in scores.iter().enumerate() {
                y[k] = col[r];
            }
        }
    }
}

/// Keeps inverse-cdf arguments strictly inside (0, 1).
#[inline]
fn open_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

struct ChunkOut {
    u: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    loss: Vec<f64>,
}

impl LossModel {
    fn generate<F>(&self, n: usize, seed: SeedSpec, dom: u64, draw: F) -> Result<ScenarioSet>
    where
        F: Fn(&mut Stream, &mut [f64], &mut [f64]) -> Result<f64> + Sync,
    {
        let (m, nz) = (self.m(), self.n());
        let d = m + nz;
        let scored = self.dependence.has_scores();
        let chunks = par_chunks(n, seed, dom, |s, rows| {
            let len = rows.len();
            let mut out = ChunkOut {
                u: vec![0.0; len * d],
                y: vec![0.0; if scored { len * d } else { 0 }],
                w: vec![0.0; len],
                x: vec![0.0; len * m],
                z: vec![0.0; len * nz],
                loss: vec![0.0; len],
            };
            let mut scratch_y = vec![0.0; d];
            for r in 0..len {
                let u = &mut out.u[r * d..(r + 1) * d];
                let y = if scored { &mut out.y[r * d..(r + 1) * d] } else { &mut scratch_y[..] };
                out.w[r] = draw(s, u, y)?;
                let x = &mut out.x[r * m..(r + 1) * m];
                for j in 0..m {
                    x[j] = self.spec.x_marginals[j].quantile(open_unit(u[j]))?;
                }
                let z = &mut out.z[r * nz..(r + 1) * nz];
                for k in 0..nz {
                    z[k] = self.spec.z_marginals[k].quantile(open_unit(u[m + k]))?;
                }
                out.loss[r] = self.spec.loss(x, z);
            }
            Ok(out)
        })?;
        let mut uniforms = vec![Vec::with_capacity(n); d];
        let mut scores = if scored { Some(vec![Vec::with_capacity(n); d]) } else { None };
        let mut mixing = Vec::with_capacity(n);
        let mut xs = vec![Vec::with_capacity(n); m];
        let mut zs = vec![Vec::with_capacity(n); nz];
        let mut loss = Vec::with_capacity(n);
        for c in chunks {
            let len = c.loss.len();
            for r in 0..len {
                for k in 0..d {
                    uniforms[k].push(c.u[r * d + k]);
                }
                if let Some(sc) = scores.as_mut() {
                    for k in 0..d {
                        sc[k].push(c.y[r * d + k]);
                    }
                }
                for j in 0..m {
                    xs[j].push(c.x[r * m + j]);
                }
                for k in 0..nz {
                    zs[k].push(c.z[r * nz + k]);
                }
            }
            mixing.extend(c.w);
            loss.extend(c.loss);
        }
        let has_mixing = mixing.iter().any(|w| !w.is_nan());
        Ok(ScenarioSet {
            n_scenarios: n,
            x: xs,
            z: zs,
            loss,
            aux: RosenblattAux { uniforms, scores, mixing: has_mixing.then_some(mixing) },
            seed,
            model_hash: self.hash.clone(),
        })
    }

    /// Unconditional scenarios.
    pub fn simulate(&self, n: usize, seed: SeedSpec) -> Result<ScenarioSet> {
        self.generate(n, seed, domain::SCENARIOS, |s, u, y| self.dependence.draw(s, u, y))
    }

    /// Scenarios with the uniform of coordinate `coord` drawn uniformly on `(lo, hi)`
    /// and every other coordinate from its conditional law.
    pub fn simulate_given(&self, coord: usize, lo: f64, hi: f64, n: usize, seed: SeedSpec) -> Result<ScenarioSet> {
        if !(lo >= 0.0 && hi <= 1.0 && lo < hi) {
            return Err(invalid(format!("conditioning band ({lo}, {hi}) must lie inside [0, 1]")));
        }
        if coord >= self.dependence.dim() {
            return Err(invalid(format!("coordinate {coord} out of range")));
        }
        self.generate(n, seed, domain::CONDITIONAL + coord as u64, |s, u, y| {
            // Open interval even when an edge is 0 or 1.
            let uj = (lo + (hi - lo) * s.uniform()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
            self.dependence.draw_given(s, coord, uj, u, y)?;
            Ok(f64::NAN)
        })
    }

    /// Loss column after stressing `target` by κ_ε with the base latents held fixed.
    pub fn stressed_loss(&self, base: &ScenarioSet, target: Factor, stress: &StressSpec, eps: f64, mode: Mode) -> Result<Vec<f64>> {
        self.check_scenarios(base)?;
        stress.validate()?;
        let (m, nz) = (self.m(), self.n());
        let t = target.coord(m, nz)?;
        stress.check_eps(eps)?;
        if eps == 0.0 {
            return Ok(base.loss.clone());
        }
        let spec = &self.spec;
        let n = base.len();
        let shifted_threshold = match (mode, target) {
            (Mode::Marginal, Factor::X(i)) if !spec.general_mode => {
                let mut d = spec.thresholds.clone();
                d[i] = stress.inverse_apply(eps, d[i])?;
                Some(d)
            }
            _ => None,
        };
        let d = m + nz;
        let scored = self.dependence.has_scores();
        let rows: Vec<usize> = (0..n).collect();
        let out: Vec<Result<Vec<f64>>> = rows
            .par_chunks(crate::rng::CHUNK_ROWS)
            .map(|chunk| {
                let mut x = vec![0.0; m];
                let mut z = vec![0.0; nz];
                let mut u = vec![0.0; d];
                let mut y = vec![0.0; if scored { d } else { 0 }];
                let mut u_new = vec![0.0; d];
                let mut y_new = vec![0.0; y.len()];
                let mut res = Vec::with_capacity(chunk.len());
                for &r in chunk {
                    base.row(r, &mut x, &mut z);
                    if let Some(dd) = &shifted_threshold {
                        let Factor::X(i) = target else { unreachable!() };
                        let before = x[i] <= spec.thresholds[i];
                        let after = x[i] <= dd[i];
                        res.push(if before == after { base.loss[r] } else { spec.loss_with_thresholds(&x, &z, dd) });
                        continue;
                    }
                    let v = base.value(target, r);
                    let v_new = stress.apply(eps, v)?;
                    if v_new == v {
                        res.push(base.loss[r]);
                        continue;
                    }
                    match target {
                        Factor::X(i) => x[i] = v_new,
                        Factor::Z(k) => z[k] = v_new,
                    }
                    if mode == Mode::Cascade && !self.dependence.is_independent() {
                        base.latents(r, &mut u, &mut y);
                        let ut_new = open_unit(spec.marginal(target).cdf(v_new)?);
                        self.dependence.transport(t, ut_new, &u, &y, &mut u_new, &mut y_new)?;
                        for k in 0..d {
                            if k == t || u_new[k] == u[k] {
                                continue;
                            }
                            let f = Factor::from_coord(k, m);
                            let val = spec.marginal(f).quantile(open_unit(u_new[k]))?;
                            match f {
                                Factor::X(j) => x[j] = val,
                                Factor::Z(l) => z[l] = val,
                            }
                        }
                    }
                    res.push(spec.loss(&x, &z));
                }
                Ok(res)
            })
            .collect();
        let mut loss = Vec::with_capacity(n);
        for part in out {
            loss.extend(part?);
        }
        Ok(loss)
    }
}

/// Unconditional scenarios of `spec`.
pub fn simulate(spec: &LossModelSpec, n: usize, seed: SeedSpec) -> Result<ScenarioSet> {
    LossModel::new(spec)?.simulate(n, seed)
}

/// Loss column of `base` re-evaluated after stressing `target`.
pub fn simulate_stressed(
    base: &ScenarioSet,
    spec: &LossModelSpec,
    target: Factor,
    stress: &StressSpec,
    eps: f64,
    mode: Mode,
) -> Result<Vec<f64>> {
    LossModel::new(spec)?.stressed_loss(base, target, stress, eps, mode)
}

/// Metadata written next to a scenario CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub n_scenarios: usize,
    pub m: usize,
    pub n: usize,
    pub seed: SeedSpec,
    pub model_hash: String,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `X1..Xm, Z1..Zn, L` with 17 significant digits, plus a JSON sidecar.
pub fn write_scenarios(set: &ScenarioSet, csv_path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = (0..set.x.len()).map(|j| Factor::X(j).to_string()).collect();
    header.extend((0..set.z.len()).map(|k| Factor::Z(k).to_string()));
    header.push("L".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for r in 0..set.len() {
        rec.clear();
        rec.extend(set.x.iter().map(|c| format!("{:.16e}", c[r])));
        rec.extend(set.z.iter().map(|c| format!("{:.16e}", c[r])));
        rec.push(format!("{:.16e}", set.loss[r]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let side = Sidecar { n_scenarios: set.len(), m: set.x.len(), n: set.z.len(), seed: set.seed, model_hash: set.model_hash.clone() };
    let path = sidecar_path(csv_path);
    std::fs::write(&path, serde_json::to_string_pretty(&side)?)?;
    Ok(path)
}

/// Reads a scenario CSV written by [`write_scenarios`] for the model `spec`.
///
/// Latent uniforms (and t scores) are rebuilt from the marginals; the mixing
/// variable is not recoverable. The stored losses must match the model exactly.
pub fn read_scenarios(csv_path: &Path, spec: &LossModelSpec) -> Result<ScenarioSet> {
    let model = LossModel::new(spec)?;
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(csv_path))?)?;
    if side.model_hash != model.hash {
        return Err(Error::ModelMismatch { expected: model.hash.clone(), found: side.model_hash });
    }
    let (m, nz) = (spec.m(), spec.n());
    if side.m != m || side.n != nz {
        return Err(invalid("scenario file dimensions do not match the model"));
    }
    let mut reader = csv::Reader::from_path(csv_path)?;
    let mut x = vec![Vec::with_capacity(side.n_scenarios); m];
    let mut z = vec![Vec::with_capacity(side.n_scenarios); nz];
    let mut loss = Vec::with_capacity(side.n_scenarios);
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != m + nz + 1 {
            return Err(invalid(format!("scenario row has {} fields, expected {}", rec.len(), m + nz + 1)));
        }
        let vals: Vec<f64> =
            rec.iter().map(|s| s.parse::<f64>().map_err(|e| invalid(format!("bad number '{s}': {e}")))).collect::<Result<_>>()?;
        for j in 0..m {
            x[j].push(vals[j]);
        }
        for k in 0..nz {
            z[k].push(vals[m + k]);
        }
        let l = vals[m + nz];
        if spec.loss(&vals[..m], &vals[m..m + nz]) != l {
            return Err(invalid(format!("row {} loss does not match the model", loss.len() + 1)));
        }
        loss.push(l);
    }
    if loss.len() != side.n_scenarios {
        return Err(invalid("scenario count differs from the sidecar"));
    }
    let d = m + nz;
    let mut uniforms = Vec::with_capacity(d);
    for j in 0..m {
        uniforms.push(x[j].iter().map(|v| spec.x_marginals[j].cdf(*v)).collect::<Result<Vec<_>>>()?);
    }
    for k in 0..nz {
        uniforms.push(z[k].iter().map(|v| spec.z_marginals[k].cdf(*v)).collect::<Result<Vec<_>>>()?);
    }
    let scores = match &spec.dependence {
        crate::copula::DependenceSpec::MultivariateT(mvt) => {
            let t = crate::special::StudentT::new(f64::from(mvt.nu));
            Some(uniforms.iter().map(|c| c.iter().map(|u| t.quantile(*u)).collect()).collect())
        }
        _ => None,
    };
    Ok(ScenarioSet {
        n_scenarios: loss.len(),
        x,
        z,
        loss,
        aux: RosenblattAux { uniforms, scores, mixing: None },
        seed: side.seed,
        model_hash: side.model_hash,
    })
}
