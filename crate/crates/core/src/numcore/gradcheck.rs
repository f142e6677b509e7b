use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::numcore::graph::{Graph, ValueId};
use crate::numcore::params::ParameterSet;

/// Settings for [`gradcheck`].
#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter array (full sweeps are quadratic
    /// in parameter count).
    pub max_coords_per_array: usize,
    /// Seed for the coordinate sampler.
    pub seed: u64,
    /// Test hook: corrupt one analytic gradient before comparing, to prove
    /// the check catches a broken gradient rule.
    pub inject_fault: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { eps: 1e-5, max_coords_per_array: 64, seed: 0, inject_fault: false }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Name of the parameter array holding the worst coordinate.
    pub worst_array: String,
    pub coords_checked: usize,
}

/// Compares analytic gradients of a deterministic scalar function against
/// central finite differences.
///
/// `f` rebuilds the computation from the current parameter values and
/// returns the scalar loss node. The relative error per coordinate is
/// `|analytic - fd| / max(1, |analytic|, |fd|)`; the maximum over all
/// sampled coordinates is returned.
pub fn gradcheck<F>(params: &mut ParameterSet, f: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<ValueId>,
{
    params.zero_grads();
    let mut graph = Graph::new();
    let loss = f(&mut graph, params)?;
    graph.backward(loss, params)?;

    let mut analytic: Vec<Vec<f64>> = params.ids().map(|id| params.grad(id).to_vec()).collect();
    if opts.inject_fault {
        if let Some(first) = analytic.iter_mut().find(|a| !a.is_empty()) {
            first[0] = first[0] * 2.0 + 1.0;
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_array: String::new(),
        coords_checked: 0,
    };

    let ids: Vec<_> = params.ids().collect();
    for (slot, id) in ids.iter().enumerate() {
        let n = params.value(*id).numel();
        let mut coords: Vec<usize> = (0..n).collect();
        coords.shuffle(&mut rng);
        coords.truncate(opts.max_coords_per_array);
        coords.sort_unstable();

        for &c in &coords {
            let original = params.value(*id).data()[c];

            params.value_mut(*id).data_mut()[c] = original + opts.eps;
            let plus = eval(&f, params)?;
            params.value_mut(*id).data_mut()[c] = original - opts.eps;
            let minus = eval(&f, params)?;
            params.value_mut(*id).data_mut()[c] = original;

            let fd = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[slot][c];
            let rel = (a - fd).abs() / 1.0_f64.max(a.abs()).max(fd.abs());
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_array = params.name(*id).to_string();
            }
        }
    }
    if report.worst_array.is_empty() {
        if let Some(first) = ids.first() {
            report.worst_array = params.name(*first).to_string();
        }
    }
    Ok(report)
}

fn eval<F>(f: &F, params: &ParameterSet) -> Result<f64>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<ValueId>,
{
    let mut graph = Graph::new();
    let loss = f(&mut graph, params)?;
    graph.value(loss).scalar_value()
}
