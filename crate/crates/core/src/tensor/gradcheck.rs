use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var, DIV_EPS};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` receives a fresh tape with one leaf per entry of `params` and must
/// return a scalar. The relative error of a coordinate is
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_diff_check<F>(params: &[Tensor<f64>], config: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[Tensor<f64>], grad: bool| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if value.numel() != 1 {
            return Err(Error::Shape(format!(
                "gradient check needs a scalar, got {:?}",
                value.shape()
            )));
        }
        if !value.item().is_finite() {
            return Err(Error::NonFinite("gradient check objective".into()));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = evaluate(params, true)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let h = config.step;
    for (ti, param) in params.iter().enumerate() {
        let n = param.numel();
        let coords: Vec<usize> = match config.max_coords_per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = param.data()[c];
            work[ti].data_mut()[c] = orig + h;
            let plus = probe(&evaluate, &work)?;
            work[ti].data_mut()[c] = orig - h;
            let minus = probe(&evaluate, &work)?;
            work[ti].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti][c];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + DIV_EPS);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ti, c));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

fn probe<E>(evaluate: &E, values: &[Tensor<f64>]) -> Result<f64>
where
    E: Fn(&[Tensor<f64>], bool) -> Result<(Tape<f64>, Vec<Var>, Var)>,
{
    let (tape, _, out) = evaluate(values, false)?;
    Ok(tape.value(out).item())
}
