//! Central finite differences for checking analytic gradients.

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_diff<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst offending coordinate, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − n| ≤ atol + rtol·max(|a|, |n|)` for every coordinate.
pub fn compare(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64) -> Result<(), GradMismatch> {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: Option<(f64, usize)> = None;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let excess = (a - n).abs() - (atol + rtol * a.abs().max(n.abs()));
        if excess > 0.0 && worst.is_none_or(|(w, _)| excess > w) {
            worst = Some((excess, i));
        }
    }
    match worst {
        None => Ok(()),
        Some((_, index)) => Err(GradMismatch {
            index,
            analytic: analytic[index],
            numeric: numeric[index],
        }),
    }
}
