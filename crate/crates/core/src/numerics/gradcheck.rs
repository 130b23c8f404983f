use crate::error::Result;
use crate::numerics::{BoundParams, Graph, GradFault, ParamStore, Var};

/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    /// Element index where the worst error occurred.
    pub worst_index: usize,
    /// Analytic and numeric derivative at `worst_index`.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub analytic_finite: bool,
}

impl ParamCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.analytic_finite && self.max_rel_error <= tol
    }
}

/// Outcome of [`grad_check`]: one row per checked parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed(self.tol))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| {
                if p.analytic_finite {
                    p.max_rel_error
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed(self.tol))
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `1e-5 · max(1, |θ|)`.
///
/// `only` restricts the check to the named parameters; `None` checks all of them.
/// `fault` is forwarded to the analytic graph so negative controls can be run.
pub fn grad_check<F>(
    params: &ParamStore<f64>,
    only: Option<&[&str]>,
    tol: f64,
    fault: GradFault,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &BoundParams<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::with_fault(fault);
    let bound = params.bind(&mut g);
    let root = f(&mut g, &bound)?;
    g.backward(root)?;
    let analytic = bound.grads(&g);
    drop(bound);

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let root = f(&mut g, &bound)?;
        Ok(g.value(root).data()[0])
    };

    let mut work = params.clone();
    let mut report = GradReport {
        tol,
        params: Vec::new(),
    };
    for (name, grad) in analytic {
        if let Some(only) = only {
            if !only.contains(&name.as_str()) {
                continue;
            }
        }
        let analytic_finite = grad.is_finite();
        let mut check = ParamCheck {
            name: name.clone(),
            numel: grad.numel(),
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            analytic_finite,
        };
        if analytic_finite {
            for i in 0..grad.numel() {
                let theta = work.get(&name).expect("bound name").data()[i];
                let h = FD_STEP * theta.abs().max(1.0);
                work.get_mut(&name).expect("bound name").data_mut()[i] = theta + h;
                let plus = eval(&work)?;
                work.get_mut(&name).expect("bound name").data_mut()[i] = theta - h;
                let minus = eval(&work)?;
                work.get_mut(&name).expect("bound name").data_mut()[i] = theta;
                let numeric = (plus - minus) / (2.0 * h);
                let err = relative_error(grad.data()[i], numeric);
                if !(err <= check.max_rel_error) {
                    check.max_rel_error = err;
                    check.worst_index = i;
                    check.worst_analytic = grad.data()[i];
                    check.worst_numeric = numeric;
                }
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
