use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec::{map_indexed, Execution};
use crate::nn::{GradientSet, ModelParams, Problem};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeProbe {
    pub alphas: Vec<f64>,
    pub n_directions: usize,
    pub seed: u64,
}

impl Default for LandscapeProbe {
    fn default() -> Self {
        Self {
            alphas: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            n_directions: 10,
            seed: 0,
        }
    }
}

impl LandscapeProbe {
    pub fn validate(&self) -> Result<()> {
        if self.n_directions == 0 {
            return Err(CoreError::InvalidConfig("n_directions must be >= 1".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(CoreError::InvalidConfig("alphas must be finite and non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeResult {
    pub alphas: Vec<f64>,
    pub base_loss: f64,
    /// `losses[a][j] = L(θ + alphas[a]·u_j)`.
    pub losses: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// `mean[a] - base_loss`, averaged per direction so that `α = 0` gives
    /// exactly zero.
    pub mean_offset: Vec<f64>,
}

impl LandscapeResult {
    /// Mean curve shifted so that it passes through zero at `θ`.
    pub fn offset_at(&self, alpha: f64) -> Option<f64> {
        let i = self.alphas.iter().position(|&a| a == alpha)?;
        Some(self.mean_offset[i])
    }

    pub fn to_csv(&self) -> String {
        let n = self.losses.first().map_or(0, Vec::len);
        let mut out = String::from("alpha,mean_loss,mean_offset");
        for j in 0..n {
            let _ = write!(out, ",dir_{j}");
        }
        out.push('\n');
        for (i, (a, row)) in self.alphas.iter().zip(&self.losses).enumerate() {
            let _ = write!(out, "{a},{},{}", self.mean[i], self.mean_offset[i]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Gaussian direction over all weight entries, normalized to unit 2-norm.
pub fn random_direction(params: &ModelParams, seed: u64, index: u64) -> GradientSet {
    let mut rng = seed::rng(seed, Stream::Directions, index);
    let flat: Vec<f64> = (0..params.n_entries()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = flat.iter().map(|v| v / norm).collect();
    GradientSet::from_flat(params, &unit)
}

/// Evaluation-mode loss along random unit directions.
pub fn landscape_slice(
    problem: &Problem<'_>,
    params: &ModelParams,
    probe: &LandscapeProbe,
    exec: Execution,
) -> Result<LandscapeResult> {
    landscape_slice_with(params, probe, exec, |p| problem.loss_at(p, None))
}

/// Same as [`landscape_slice`] for an arbitrary scalar function.
pub fn landscape_slice_with<F>(
    params: &ModelParams,
    probe: &LandscapeProbe,
    exec: Execution,
    f: F,
) -> Result<LandscapeResult>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync + Send,
{
    probe.validate()?;
    let base_loss = f(params)?;
    // One task per direction, each returning its column.
    let columns = map_indexed(exec, probe.n_directions, |j| {
        let u = random_direction(params, probe.seed, j as u64);
        probe
            .alphas
            .iter()
            .map(|&a| if a == 0.0 { Ok(base_loss) } else { f(&params.offset(&u, a)) })
            .collect::<Result<Vec<f64>>>()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let losses: Vec<Vec<f64>> = (0..probe.alphas.len())
        .map(|a| columns.iter().map(|c| c[a]).collect())
        .collect();
    let mean_offset: Vec<f64> = losses
        .iter()
        .map(|row| row.iter().map(|l| l - base_loss).sum::<f64>() / row.len() as f64)
        .collect();
    Ok(LandscapeResult {
        alphas: probe.alphas.clone(),
        base_loss,
        mean: mean_offset.iter().map(|o| base_loss + o).collect(),
        mean_offset,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::SmallInstance;
    use crate::linalg::DenseMatrix;
    use crate::nn::ModelKind;

    #[test]
    fn zero_alpha_is_the_base_loss() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 2).unwrap();
        let problem = inst.problem();
        let r = landscape_slice(&problem, &inst.params, &LandscapeProbe::default(), Execution::Sequential).unwrap();
        let base = problem.loss_at(&inst.params, None).unwrap();
        assert!(r.losses[2].iter().all(|&v| v == base));
        assert_eq!(r.mean[2], base);
        assert_eq!(r.offset_at(0.0), Some(0.0));
    }

    #[test]
    fn directions_are_unit() {
        let inst = SmallInstance::random(ModelKind::Ppnp, 1).unwrap();
        for j in 0..10 {
            let u = random_direction(&inst.params, 7, j);
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_slice_is_symmetric() {
        // L(θ) = Σ c_k θ_k² has its minimum at 0, so every slice is even.
        let p = ModelParams::new(vec![DenseMatrix::zeros(3, 4)], vec![true]).unwrap();
        let coef: Vec<f64> = (0..12).map(|k| 0.5 + k as f64 * 0.1).collect();
        let probe = LandscapeProbe {
            alphas: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            n_directions: 10,
            seed: 3,
        };
        let r = landscape_slice_with(&p, &probe, Execution::Sequential, |q| {
            Ok(q.flatten().iter().zip(&coef).map(|(t, c)| c * t * t).sum())
        })
        .unwrap();
        assert!((r.mean[0] - r.mean[4]).abs() < 1e-12);
        assert!((r.mean[1] - r.mean[3]).abs() < 1e-12);
        // Exact value for each direction: α² Σ c_k u_k².
        let u = random_direction(&p, 3, 0).flatten();
        let expect: f64 = 0.25 * u.iter().zip(&coef).map(|(v, c)| c * v * v).sum::<f64>();
        assert!((r.losses[4][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn parallel_matches_sequential() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 4).unwrap();
        let problem = inst.problem();
        let probe = LandscapeProbe::default();
        let a = landscape_slice(&problem, &inst.params, &probe, Execution::Sequential).unwrap();
        let b = landscape_slice(&problem, &inst.params, &probe, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv().lines().count(), 6);
    }
}
