//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::{GradMode, ParamStore, Tape, Tensor, Var};

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Which coordinates of each input to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// At most this many coordinates per input tensor, chosen uniformly.
    Sample(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(input label, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            coords_checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.coords_checked += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((label.to_string(), index, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.coords_checked += other.coords_checked;
        if other.worst.is_some()
            && (self.worst.is_none() || other.max_rel_error > self.max_rel_error)
        {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
    }
}

fn coords<R: Rng + ?Sized>(numel: usize, coverage: Coverage, rng: &mut R) -> Vec<usize> {
    match coverage {
        Coverage::Sample(k) if k < numel => {
            let mut v = sample(rng, numel, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..numel).collect(),
    }
}

/// Disagreement above which a coordinate is re-estimated.
const REFINE_ABOVE: f64 = 1e-7;
/// Step multiplier for the re-estimate.
const REFINE_SCALE: f64 = 100.0;

/// Central difference `(f(x+h) − f(x−h)) / 2h`. When it disagrees with
/// `analytic` by more than [`REFINE_ABOVE`], the derivative is estimated again
/// with the fourth-order stencil at step `100h`, whose roundoff is a hundred
/// times smaller, and the closer of the two estimates is returned. Gradients
/// near the roundoff level of the plain difference need this; a wrong
/// analytic gradient disagrees with both.
fn estimate(analytic: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let central = (f(h) - f(-h)) / (2.0 * h);
    if relative_error(analytic, central) <= REFINE_ABOVE {
        return central;
    }
    let w = h * REFINE_SCALE;
    let wide = (8.0 * (f(w) - f(-w)) - (f(2.0 * w) - f(-2.0 * w))) / (12.0 * w);
    if relative_error(analytic, wide) < relative_error(analytic, central) {
        wide
    } else {
        central
    }
}

/// Compare backward gradients of a scalar function of free tensors against
/// finite differences (see [`estimate`]).
pub fn finite_diff_check<F, R>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    coverage: Coverage,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss);

    let eval = |xs: &[Tensor]| {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs);
        t.scalar(out)
    };

    let mut report = GradCheckReport::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (n, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for i in coords(inputs[n].numel(), coverage, rng) {
            let x0 = inputs[n].data()[i];
            let numeric = estimate(analytic.data()[i], h, |dx| {
                work[n].data_mut()[i] = x0 + dx;
                let y = eval(&work);
                work[n].data_mut()[i] = x0;
                y
            });
            report.record(&format!("input{n}"), i, analytic.data()[i], numeric);
        }
    }
    report
}

/// Same check for a scalar function of every parameter in `store`.
pub fn finite_diff_check_params<F, R>(
    f: F,
    store: &ParamStore,
    h: f64,
    coverage: Coverage,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
    R: Rng + ?Sized,
{
    finite_diff_check_selected(f, store, |_| true, h, coverage, rng)
}

/// Like [`finite_diff_check_params`], perturbing only parameters whose name
/// passes `select`.
pub fn finite_diff_check_selected<F, S, R>(
    f: F,
    store: &ParamStore,
    select: S,
    h: f64,
    coverage: Coverage,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
    S: Fn(&str) -> bool,
    R: Rng + ?Sized,
{
    let mut analytic = store.clone();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &analytic);
    tape.backward_into(loss, &mut analytic, GradMode::Overwrite);

    let eval = |s: &ParamStore| {
        let mut t = Tape::no_grad();
        let out = f(&mut t, s);
        t.scalar(out)
    };

    let mut report = GradCheckReport::new();
    let mut work = store.clone();
    for id in store.ids() {
        let name = store.name(id).to_string();
        if !select(&name) {
            continue;
        }
        for i in coords(store.value(id).numel(), coverage, rng) {
            let x0 = store.value(id).data()[i];
            let a = analytic.grad(id).data()[i];
            let numeric = estimate(a, h, |dx| {
                work.value_mut(id).data_mut()[i] = x0 + dx;
                let y = eval(&work);
                work.value_mut(id).data_mut()[i] = x0;
                y
            });
            report.record(&name, i, a, numeric);
        }
    }
    report
}
