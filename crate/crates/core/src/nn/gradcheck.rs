use super::{NnError, ParamStore, Tape, Tensor, Var};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs() + numeric.abs())
}

fn eval_scalar<F>(store: &ParamStore, inputs: &[Tensor], f: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NnError>,
{
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(NnError::NonFinite { op: "gradient_check" });
    }
    Ok(v)
}

/// Compares the tape gradient of scalar `f` with respect to each input
/// against central finite differences. Returns the maximum relative error
/// `|a-n| / max(1, |a|+|n|)`.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NnError>,
{
    if eps <= 0.0 {
        return Err(NnError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let store = ParamStore::new();
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for k in 0..probe[i].numel() {
            let orig = probe[i].data()[k];
            probe[i].data_mut()[k] = orig + eps;
            let plus = eval_scalar(&store, &probe, &f)?;
            probe[i].data_mut()[k] = orig - eps;
            let minus = eval_scalar(&store, &probe, &f)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(grad.data()[k], numeric));
        }
    }
    Ok(worst)
}

/// Same check with respect to the parameters of `store`. `f` builds the
/// scalar loss on an evaluation tape. When `max_coords_per_param` is set,
/// only an evenly strided subset of each parameter's coordinates is probed.
pub fn gradient_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    max_coords_per_param: Option<usize>,
) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NnError>,
{
    if eps <= 0.0 {
        return Err(NnError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        let v = tape.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NnError::NonFinite { op: "gradient_check" })
        }
    };

    let mut analytic = store.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        let grads = tape.backward(out)?;
        analytic.accumulate(&grads);
    }

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.value(id).numel();
        let stride = match max_coords_per_param {
            Some(limit) if limit > 0 && n > limit => n.div_ceil(limit),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let orig = store.value(id).data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.get(id).grad.data()[k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let err = gradient_check(
            |tape, x| {
                let sq = tape.mul(x[0], x[0])?;
                tape.sum(sq)
            },
            &[Tensor::row(vec![1.0, 2.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let err = gradient_check(
            |tape, x| {
                let y = tape.affine(x[0], 3.0, 1.0)?;
                tape.sum(y)
            },
            &[Tensor::row(vec![0.5, -2.0, 7.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_eps_and_nonfinite() {
        let f = |tape: &mut Tape<'_>, x: &[Var]| tape.sum(x[0]);
        assert!(gradient_check(f, &[Tensor::scalar(1.0)], 0.0).is_err());
        let g = |tape: &mut Tape<'_>, x: &[Var]| {
            let y = tape.affine(x[0], 1e308, 0.0)?;
            let y = tape.affine(y, 10.0, 0.0)?;
            tape.sum(y)
        };
        assert!(gradient_check(g, &[Tensor::scalar(1.0)], 1e-5).is_err());
    }
}
