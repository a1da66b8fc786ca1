//! Central finite-difference checks of tape gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::rng::stream;
use super::{NnError, ParamStore, Tape, Tensor, Var};

/// Worst discrepancy found by [`gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(max |a|, max |n|)` over the worst tensor.
    pub max_rel_error: f64,
    pub worst: String,
    pub entries_checked: usize,
}

/// Relative error of two gradient tensors, scaled by the larger magnitude of
/// either. Two all-zero tensors compare as 0.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `Σ rᵢ · yᵢ` against central
/// differences with step `h`, where `yᵢ` are the outputs returned by
/// `build(tape, store, inputs)` and `rᵢ` seeded Gaussian projections. Every input tensor and every parameter registered on
/// the tape is checked; at most `max_entries` entries per tensor, chosen by
/// seeded sampling.
pub fn gradient_check<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    build: F,
    seed: u64,
    h: f64,
    max_entries: usize,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Vec<Var>, NnError>,
{
    let run = |store: &ParamStore, inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Vec<Var>), NnError> {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
        let y = build(&mut t, store, &vars)?;
        Ok((t, vars, y))
    };
    let (tape, vars, ys) = run(store, inputs)?;
    let mut rng = stream(seed, "gradcheck.projection", &[]);
    let mut projections = Vec::with_capacity(ys.len());
    for &y in &ys {
        let v = tape.value(y);
        let r: Vec<f64> = (0..v.len()).map(|_| rng.sample(StandardNormal)).collect();
        projections.push(Tensor::new(v.shape().to_vec(), r)?);
    }
    let grads = tape.backward_seeded(ys.iter().copied().zip(projections.iter().cloned()).collect());
    let objective = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64, NnError> {
        let (t, _, ys) = run(store, inputs)?;
        Ok(ys
            .iter()
            .zip(&projections)
            .map(|(&y, r)| t.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    };

    let pick = |len: usize, label: &str| -> Vec<usize> {
        if len <= max_entries {
            return (0..len).collect();
        }
        let mut rng = stream(seed, label, &[]);
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..max_entries {
            let j = rng.random_range(i..len);
            idx.swap(i, j);
        }
        idx.truncate(max_entries);
        idx
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), entries_checked: 0 };
    let note = |name: String, a: Vec<f64>, n: Vec<f64>, report: &mut GradCheckReport| {
        let e = relative_error(&a, &n);
        report.entries_checked += a.len();
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = name;
        }
    };

    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let idx = pick(x.len(), &format!("gradcheck.input.{k}"));
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += h;
            let plus = objective(store, &xs)?;
            xs[k].data_mut()[i] -= 2.0 * h;
            let minus = objective(store, &xs)?;
            analytic.push(g.data()[i]);
            numeric.push((plus - minus) / (2.0 * h));
        }
        note(format!("input {k}"), analytic, numeric, &mut report);
    }

    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let Some(g) = grads.param(&name) else { continue };
        let len = g.len();
        let idx = pick(len, &format!("gradcheck.param.{name}"));
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        let mut perturbed = store.clone();
        for &i in &idx {
            let orig = store.get(&name).expect("param").value.data()[i];
            perturbed.get_mut(&name).expect("param").value.data_mut()[i] = orig + h;
            let plus = objective(&perturbed, inputs)?;
            perturbed.get_mut(&name).expect("param").value.data_mut()[i] = orig - h;
            let minus = objective(&perturbed, inputs)?;
            perturbed.get_mut(&name).expect("param").value.data_mut()[i] = orig;
            analytic.push(g.data()[i]);
            numeric.push((plus - minus) / (2.0 * h));
        }
        note(name, analytic, numeric, &mut report);
    }
    Ok(report)
}
