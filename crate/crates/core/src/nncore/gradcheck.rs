//! Finite-difference verification of the backward passes.

use rand::seq::SliceRandom;

use crate::seed;

use super::graph::GradStore;
use super::tensor::ParameterSet;
use super::NnError;

/// Sampling and tolerance knobs for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates checked per parameter tensor (all when it has fewer).
    pub max_coords_per_tensor: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub rel_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_tensor: 24,
            seed: 0,
            rel_floor: 1e-6,
        }
    }
}

/// Compare reverse-mode gradients against central finite differences on a
/// sample of coordinates of every parameter; returns the maximum relative
/// error seen.
///
/// `f` evaluates the scalar loss and its analytic parameter gradients; it
/// is re-invoked (loss only) for each perturbed coordinate. Parameters are
/// restored exactly after probing.
pub fn grad_check<F>(
    params: &mut ParameterSet,
    cfg: &GradCheckConfig,
    f: F,
) -> Result<f64, NnError>
where
    F: Fn(&ParameterSet) -> Result<(f64, GradStore), NnError>,
{
    let (_, analytic) = f(params)?;
    for (path, grad) in analytic.iter() {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(path.clone()));
        }
    }

    let paths: Vec<String> = params.paths().cloned().collect();
    let mut max_rel = 0.0f64;
    for (tensor_idx, path) in paths.iter().enumerate() {
        let numel = params.get(path).map(|t| t.numel()).unwrap_or(0);
        if numel == 0 {
            continue;
        }
        let mut coords: Vec<usize> = (0..numel).collect();
        if numel > cfg.max_coords_per_tensor {
            coords.shuffle(&mut seed::rng(seed::derive_index(
                cfg.seed,
                "gradcheck",
                tensor_idx as u64,
            )));
            coords.truncate(cfg.max_coords_per_tensor);
        }
        for &i in &coords {
            let original = params.get(path).unwrap().data()[i];

            params.get_mut(path).unwrap().data_mut()[i] = original + cfg.eps;
            let (plus, _) = f(params)?;
            params.get_mut(path).unwrap().data_mut()[i] = original - cfg.eps;
            let (minus, _) = f(params)?;
            params.get_mut(path).unwrap().data_mut()[i] = original;

            let fd = (plus - minus) / (2.0 * cfg.eps);
            let an = analytic.get(path).map_or(0.0, |g| g[i]);
            if !fd.is_finite() {
                return Err(NnError::NonFiniteGradient(format!("{path}[{i}] (fd)")));
            }
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(cfg.rel_floor);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    #[test]
    fn sum_of_squares_checks_below_1e7() {
        let mut params = ParameterSet::new();
        params.insert(
            "w",
            Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.05]).unwrap(),
        );
        let max_rel = grad_check(&mut params, &GradCheckConfig::default(), |p| {
            let w = p.get("w").unwrap();
            let loss: f64 = w.data().iter().map(|v| v * v).sum();
            let grad: Vec<f64> = w.data().iter().map(|v| 2.0 * v).collect();
            let mut store = GradStore::default();
            store.accumulate("w", &grad);
            Ok((loss, store))
        })
        .unwrap();
        assert!(max_rel < 1e-7, "max_rel {max_rel}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let max_rel = grad_check(&mut params, &GradCheckConfig::default(), |_| {
            Ok((7.5, GradStore::default()))
        })
        .unwrap();
        assert_eq!(max_rel, 0.0);
    }
}
