//! Finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Denominator floor of the relative error, so that vanishing gradients are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, element, analytic, numeric)` at the worst element.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Compares reverse-mode gradients of the scalar function `f` against the
/// five-point central difference with step `h` at every input element.
pub fn check<F>(inputs: &[Tensor], f: F, h: f64) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).expect("scalar output");

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0, 0.0, 0.0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let mut at = |dx: f64| {
                probe[i].data_mut()[j] = x0 + dx;
                eval(&f, &probe)
            };
            let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            probe[i].data_mut()[j] = x0;
            let a = analytic.data()[j];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = (i, j, a, numeric);
            }
        }
    }
    report
}
