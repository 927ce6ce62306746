use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: Vec<(String, f64)>,
    pub passed: bool,
    /// Coordinates compared against finite differences.
    pub probed: usize,
    /// Probed coordinates whose ±epsilon evaluations fell on different sides
    /// of a marked kink; finite differences say nothing there, so they are
    /// left out of the error figures.
    pub straddled_kinks: usize,
}

fn evaluate<T, F>(forward: &F, params: &[Tensor<T>]) -> Result<(f64, Vec<bool>)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = forward(&mut tape, &vars)?;
    let value = tape
        .value(out)
        .item()
        .map(Scalar::as_f64)
        .ok_or_else(|| TensorError::CheckInvalid("forward must return a scalar".into()))?;
    Ok((value, tape.kink_signature()))
}

/// Compares tape gradients against central differences for every scalar
/// parameter.
///
/// Relative error is `|a − b| / max(1e-8, |a| + |b|)`; the check passes when
/// the largest error is below `tolerance`. Coordinates where the central
/// difference straddles a kink (see [`Tape::mark_kink`]) are counted but not
/// scored.
pub fn grad_check<T, F>(
    forward: F,
    params: &[(String, Tensor<T>)],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    check(forward, params, epsilon, tolerance, |len| (0..len).collect())
}

/// Like [`grad_check`], but probes at most `per_parameter` coordinates of each
/// parameter, chosen by a seeded draw. Meant for whole networks where a full
/// sweep would need one forward pass per weight.
pub fn grad_check_sampled<T, F>(
    forward: F,
    params: &[(String, Tensor<T>)],
    epsilon: f64,
    tolerance: f64,
    per_parameter: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check(forward, params, epsilon, tolerance, |len| {
        if len <= per_parameter {
            (0..len).collect()
        } else {
            let mut picked = rand::seq::index::sample(&mut rng, len, per_parameter).into_vec();
            picked.sort_unstable();
            picked
        }
    })
}

fn check<T, F>(
    forward: F,
    params: &[(String, Tensor<T>)],
    epsilon: f64,
    tolerance: f64,
    mut coordinates: impl FnMut(usize) -> Vec<usize>,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::CheckInvalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if params.is_empty() {
        return Ok(GradCheckReport {
            max_relative_error: 0.0,
            per_parameter_errors: Vec::new(),
            passed: true,
            probed: 0,
            straddled_kinks: 0,
        });
    }

    let values: Vec<Tensor<T>> = params.iter().map(|(_, t)| t.clone()).collect();
    let (first, baseline) = evaluate(&forward, &values)?;
    let (second, _) = evaluate(&forward, &values)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::CheckInvalid(format!(
            "forward is not deterministic: {first} vs {second}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = forward(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut per_parameter_errors = Vec::with_capacity(params.len());
    let mut max_relative_error: f64 = 0.0;
    let (mut probed, mut straddled_kinks) = (0, 0);
    let mut perturbed = values.clone();
    for (p, (name, tensor)) in params.iter().enumerate() {
        let analytic = grads.get(vars[p]).expect("leaf gradients are always populated");
        let mut worst: f64 = 0.0;
        for i in coordinates(tensor.len()) {
            let mut plus = tensor.to_vec();
            plus[i] = T::lit(plus[i].as_f64() + epsilon);
            perturbed[p] = Tensor::new(tensor.shape(), plus)?;
            let (f_plus, sig_plus) = evaluate(&forward, &perturbed)?;

            let mut minus = tensor.to_vec();
            minus[i] = T::lit(minus[i].as_f64() - epsilon);
            perturbed[p] = Tensor::new(tensor.shape(), minus)?;
            let (f_minus, sig_minus) = evaluate(&forward, &perturbed)?;

            probed += 1;
            if sig_plus != baseline || sig_minus != baseline {
                straddled_kinks += 1;
                continue;
            }

            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic.data()[i].as_f64();
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
        perturbed[p] = tensor.clone();
        max_relative_error = max_relative_error.max(worst);
        per_parameter_errors.push((name.clone(), worst));
    }

    Ok(GradCheckReport {
        max_relative_error,
        per_parameter_errors,
        passed: max_relative_error < tolerance,
        probed,
        straddled_kinks,
    })
}
