use rand::seq::index::sample;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates checked per parameter; larger tensors are subsampled.
    pub max_coords: usize,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_coords: 24, floor: 1e-4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error, coordinates checked)`.
    pub per_param: Vec<(String, f64, usize)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    let v = tape.item(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite { context: "grad_check loss".into() });
    }
    Ok(v)
}

/// Compares tape gradients of the scalar built by `f` with five-point
/// central differences (truncation error O(eps^4)).
pub fn grad_check<F>(store: &ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    if !analytic.all_finite() {
        return Err(Error::NonFinite { context: "grad_check analytic gradient".into() });
    }
    let mut work = store.clone();
    let mut rng = seeds::rng(opts.seed, "gradcheck", &[]);
    let mut per_param = Vec::new();
    for id in store.ids() {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = store.value(id).data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                work.value_mut(id).data_mut()[i] = orig + offset;
                eval(&work, &f)
            };
            let h = opts.eps;
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            work.value_mut(id).data_mut()[i] = orig;
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
        per_param.push((store.name(id).to_string(), worst, coords.len()));
    }
    Ok(GradCheckReport { per_param })
}
