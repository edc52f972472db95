//! Central finite-difference verification of analytic gradients.

use crate::model::{Network, ParamGroup};

/// Gradients smaller than this in magnitude are compared absolutely against
/// it instead of relatively, since finite differences cannot resolve them.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Tensor name and index of the worst component.
    pub worst: Option<(String, usize)>,
    /// Components outside `group` whose analytic gradient was not exactly zero.
    pub nonzero_frozen: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance && self.nonzero_frozen == 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` with step `h`
/// for every parameter in `group`; parameters outside it must have an
/// analytic gradient of exactly zero.
pub fn check_gradients<F>(net: &Network, analytic: &Network, group: ParamGroup, h: f64, loss: F) -> GradCheckReport
where
    F: Fn(&Network) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
        nonzero_frozen: 0,
    };
    let names: Vec<(String, ParamGroup, usize)> =
        net.tensors().into_iter().map(|(n, g, t)| (n, g, t.len())).collect();
    let analytic_tensors = analytic.tensors();
    let mut probe = net.clone();
    for (t, (name, tensor_group, len)) in names.iter().enumerate() {
        let grad = analytic_tensors[t].2;
        debug_assert_eq!(grad.len(), *len);
        let trainable = group == ParamGroup::All || group == *tensor_group;
        if !trainable {
            report.nonzero_frozen += grad.iter().filter(|g| **g != 0.0).count();
            continue;
        }
        for (i, &g) in grad.iter().enumerate() {
            let original = tensor_value(&probe, t, i);
            set_tensor_value(&mut probe, t, i, original + h);
            let plus = loss(&probe);
            set_tensor_value(&mut probe, t, i, original - h);
            let minus = loss(&probe);
            set_tensor_value(&mut probe, t, i, original);
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(g, numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}

fn tensor_value(net: &Network, tensor: usize, index: usize) -> f64 {
    net.tensors()[tensor].2[index]
}

fn set_tensor_value(net: &mut Network, tensor: usize, index: usize, value: f64) {
    let mut tensors = net.tensors_mut();
    tensors[tensor].1[index] = value;
}
