use super::{Primitive, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares the tape gradient of a scalar function of one tensor against
/// central differences. Returns the largest
/// `|analytic − numeric| / max(floor, |analytic| + |numeric|)`, where
/// `floor = max(1e-8, 1e-4·max|analytic|)` so coordinates whose true gradient
/// is zero are judged against the gradient's overall scale.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_inputs(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
        None,
        None,
    )?;
    Ok(report.max_rel_err)
}

/// Multi-input gradient check.
///
/// `max_coords` caps how many coordinates of each input are probed (evenly
/// strided through the buffer); `fault` builds the analytic tape with a
/// deliberately broken backward rule.
pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    max_coords: Option<usize>,
    fault: Option<Primitive>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_impl(f, inputs, None, eps, max_coords, fault)
}

/// Checks the vector-Jacobian product `cotangentᵀ·J` of a tensor-valued `f`.
/// The numeric side is `Σ cotangent·f` evaluated outside the tape, so the
/// only recorded backward rules are the ones inside `f`.
pub fn grad_check_vjp<F>(
    f: F,
    inputs: &[Tensor],
    cotangent: &Tensor,
    eps: f64,
    fault: Option<Primitive>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_impl(f, inputs, Some(cotangent), eps, None, fault)
}

fn check_impl<F>(
    f: F,
    inputs: &[Tensor],
    cotangent: Option<&Tensor>,
    eps: f64,
    max_coords: Option<usize>,
    fault: Option<Primitive>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite-difference step {eps:e} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = match fault {
        Some(p) => Tape::with_fault(p),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = match cotangent {
        Some(w) => {
            if w.shape() != tape.shape(root) {
                return Err(Error::dim(format!(
                    "cotangent shape {:?} does not match output {:?}",
                    w.shape(),
                    tape.shape(root)
                )));
            }
            tape.backward_seeded(root, w.data())?
        }
        None => {
            if tape.value(root).numel() != 1 {
                return Err(Error::Contract("grad_check needs a scalar function".into()));
            }
            tape.backward(root)?
        }
    };

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|p| t.constant(p.clone())).collect();
        let r = f(&mut t, &vs)?;
        let y = t.value(r).data();
        Ok(match cotangent {
            Some(w) => y.iter().zip(w.data()).map(|(a, b)| a * b).sum(),
            None => y[0],
        })
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let scale = vars
        .iter()
        .flat_map(|v| grads.tensor(*v).into_data())
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-4 * scale).max(1e-8);
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.tensor(*var);
        let numel = inputs[which].numel();
        let coords: Vec<usize> = match max_coords {
            Some(cap) if cap < numel => {
                let step = numel as f64 / cap as f64;
                (0..cap).map(|i| ((i as f64 + 0.5) * step) as usize).collect()
            }
            _ => (0..numel).collect(),
        };
        for i in coords {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            report.coords_checked += 1;
            if rel >= report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (which, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
