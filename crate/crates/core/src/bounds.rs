//! Leakage bounds, utility-privacy tradeoff bounds and their empirical inputs.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::loss::{floored_ln, softmax};
use crate::nn::Mlp;

/// Power-iteration steps used by [`lipschitz_upper`].
pub const POWER_ITERS: usize = 100;

/// `H₂(p)` in bits.
pub fn binary_entropy_bits(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Lower bound `p / (2·log₂(6/p))` on the inverse binary entropy.
pub fn inv_binary_entropy_lower(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("p = {p} not in (0, 1]")));
    }
    Ok(p / (2.0 * (6.0 / p).log2()))
}

/// Exact `H₂⁻¹(h)` on `[0, ½]` by bisection.
pub fn inv_binary_entropy_exact(h: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(invalid(format!("entropy {h} not in [0, 1] bits")));
    }
    if h == 1.0 {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy_bits(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Cap on any attacker's accuracy given `H(u | r)` in bits:
/// `1 − H / (2·log₂(6/H))`, and `1` at `H = 0`.
pub fn mia_leakage_bound(h_cond_bits: f64) -> Result<f64> {
    if !(h_cond_bits >= 0.0) {
        return Err(invalid(format!("conditional entropy {h_cond_bits} must be >= 0")));
    }
    if h_cond_bits == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - h_cond_bits / (2.0 * (6.0 / h_cond_bits).log2())).clamp(0.0, 1.0))
}

/// The same cap over dataset representations.
pub fn pia_leakage_bound(h_cond_bits: f64) -> Result<f64> {
    mia_leakage_bound(h_cond_bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyEstimator {
    PlugIn,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageBoundResult {
    pub h_cond_bits: f64,
    pub bound: f64,
    pub estimator: EntropyEstimator,
    /// Always false: both entropy inputs are estimates.
    pub certified: bool,
}

impl LeakageBoundResult {
    pub fn new(h_cond_bits: f64, estimator: EntropyEstimator) -> Result<Self> {
        Ok(Self {
            h_cond_bits,
            bound: mia_leakage_bound(h_cond_bits)?,
            estimator,
            certified: false,
        })
    }
}

/// `(plug_in, ce_upper)` in bits from posterior rows `q(·|r_i)` and true `u_i`.
pub fn conditional_entropy_from_probs(probs: ArrayView2<f64>, u: &[usize]) -> Result<(f64, f64)> {
    let n = probs.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if u.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: u.len() });
    }
    let ln2 = std::f64::consts::LN_2;
    let mut plug = 0.0;
    let mut ce = 0.0;
    for (i, row) in probs.rows().into_iter().enumerate() {
        if u[i] >= row.len() {
            return Err(invalid(format!("attribute value {} out of range", u[i])));
        }
        plug -= row.iter().map(|&p| if p > 0.0 { p * floored_ln(p) } else { 0.0 }).sum::<f64>();
        ce -= floored_ln(row[u[i]]);
    }
    Ok((plug / (n as f64 * ln2), ce / (n as f64 * ln2)))
}

/// Both conditional-entropy estimates for an adversary head on a frozen encoder.
pub fn conditional_entropy_estimates(encoder: &Mlp, head: &Mlp, x: ArrayView2<f64>, u: &[usize]) -> Result<(f64, f64)> {
    let r = encoder.forward_batch(x)?;
    let p = softmax(head.forward_batch(r.view())?.view());
    conditional_entropy_from_probs(p.view(), u)
}

/// `Γ(k/2)` for a positive integer `k`.
pub fn gamma_half(k: usize) -> f64 {
    assert!(k > 0);
    if k.is_multiple_of(2) {
        (1..k / 2).map(|i| i as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut x = 0.5;
        while x + 1.0 <= k as f64 / 2.0 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Boundary volumes for the reconstruction bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub d: usize,
    pub p: u32,
    pub vol_boundary_x: f64,
    pub vol_boundary_eta: f64,
}

impl GeometrySpec {
    /// Unit hypercube `[0,1]^d` (surface `2d`) with the `η`-sphere surface
    /// `2π^{d/2} η^{d−1} / Γ(d/2)` standing in for the boundary intersection.
    pub fn hypercube(d: usize, eta: f64) -> Result<Self> {
        if d == 0 || !(eta > 0.0) {
            return Err(Error::InvalidGeometry(format!("d = {d}, eta = {eta}")));
        }
        let df = d as f64;
        let sphere = 2.0 * std::f64::consts::PI.powf(df / 2.0) * eta.powf(df - 1.0) / gamma_half(d);
        Ok(Self {
            d,
            p: 2,
            vol_boundary_x: 2.0 * df,
            vol_boundary_eta: sphere,
        })
    }
}

/// Lower bound on the probability that any reconstruction errs by more than
/// `η`: `max(0, 1 − (I + ln 2) / (ln Vol(∂X) − ln Vol(∂X(η))))`, natural logs.
pub fn dra_error_bound(mi_nats: f64, geom: &GeometrySpec) -> Result<f64> {
    if !(geom.vol_boundary_x > 0.0 && geom.vol_boundary_eta > 0.0) {
        return Err(Error::InvalidGeometry("boundary volumes must be positive".into()));
    }
    if geom.vol_boundary_eta >= geom.vol_boundary_x {
        return Err(Error::InvalidGeometry(format!(
            "Vol(dX(eta)) = {} must be smaller than Vol(dX) = {}",
            geom.vol_boundary_eta, geom.vol_boundary_x
        )));
    }
    if !(mi_nats >= 0.0) {
        return Err(invalid(format!("mutual information {mi_nats} must be >= 0")));
    }
    let denom = geom.vol_boundary_x.ln() - geom.vol_boundary_eta.ln();
    Ok((1.0 - (mi_nats + std::f64::consts::LN_2) / denom).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreatVariant {
    Mia,
    Pia,
    Dra,
}

/// Inputs to the risk lower bound. For the reconstruction variant `r` is the
/// bound on the perturbed representation norm and `delta` is `Δ_y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffInputs {
    pub delta: f64,
    pub r: f64,
    pub c_l: f64,
    pub adv: f64,
}

impl TradeoffInputs {
    pub fn new(delta: f64, r: f64, c_l: f64, adv: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) || !(r >= 0.0) || !(c_l >= 0.0) || !(0.0..=1.0).contains(&adv) {
            return Err(invalid(format!(
                "tradeoff inputs out of range: delta={delta}, R={r}, C_L={c_l}, adv={adv}"
            )));
        }
        Ok(Self { delta, r, c_l, adv })
    }
}

/// `max(0, Δ − 2R·C_L·Adv)`; identical in form for all three threats.
pub fn tradeoff_bound(inputs: &TradeoffInputs, _variant: ThreatVariant) -> f64 {
    (inputs.delta - 2.0 * inputs.r * inputs.c_l * inputs.adv).max(0.0)
}

/// `max_a |P̂(A = a | u = a) − P̂(A = a | u ≠ a)|` over the attribute values
/// present in `u`. For binary membership this is `|TPR − FPR|`.
pub fn empirical_advantage(decisions: &[usize], u: &[usize]) -> Result<f64> {
    if decisions.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: decisions.len(),
        });
    }
    let mut values: Vec<usize> = u.to_vec();
    values.sort_unstable();
    values.dedup();
    if values.len() < 2 {
        return Err(Error::SingleClass("advantage needs both attribute values".into()));
    }
    let mut best = 0.0f64;
    for &a in &values {
        let (mut hit_in, mut n_in, mut hit_out, mut n_out) = (0usize, 0usize, 0usize, 0usize);
        for (&d, &v) in decisions.iter().zip(u) {
            if v == a {
                n_in += 1;
                hit_in += (d == a) as usize;
            } else {
                n_out += 1;
                hit_out += (d == a) as usize;
            }
        }
        best = best.max((hit_in as f64 / n_in as f64 - hit_out as f64 / n_out as f64).abs());
    }
    Ok(best)
}

/// Reconstruction advantage with the `η`-exact success event
/// `‖A(r′) − x‖₂ ≤ η`: `|P̂(success | y = 0) − P̂(success | y = 1)|`.
pub fn dra_advantage(errors: &[f64], y: &[usize], eta: f64) -> Result<f64> {
    if errors.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: errors.len(),
        });
    }
    let rate = |c: usize| -> Option<f64> {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        (!idx.is_empty()).then(|| idx.iter().filter(|&&i| errors[i] <= eta).count() as f64 / idx.len() as f64)
    };
    match (rate(0), rate(1)) {
        (Some(a), Some(b)) => Ok((a - b).abs()),
        _ => Err(Error::SingleClass("advantage needs both label values".into())),
    }
}

/// `(Δ_{y|u}, Δ_y)` = `(|P(y=1|u=0) − P(y=1|u=1)|, |P(y=1) − P(y=0)|)`.
pub fn delta_constants(y: &[usize], u: &[usize]) -> Result<(f64, f64)> {
    if y.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: u.len() });
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if y.iter().any(|&v| v > 1) {
        return Err(invalid("the tradeoff bounds assume binary task labels"));
    }
    let rate = |g: usize| -> Result<f64> {
        let idx: Vec<usize> = (0..u.len()).filter(|&i| u[i] == g).collect();
        if idx.is_empty() {
            return Err(Error::SingleClass(format!("no samples with u = {g}")));
        }
        Ok(idx.iter().filter(|&&i| y[i] == 1).count() as f64 / idx.len() as f64)
    };
    let p1 = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
    Ok(((rate(0)? - rate(1)?).abs(), (2.0 * p1 - 1.0).abs()))
}

/// `Δ_y` alone (no attribute needed).
pub fn delta_y(y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if y.iter().any(|&v| v > 1) {
        return Err(invalid("the tradeoff bounds assume binary task labels"));
    }
    let p1 = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
    Ok((2.0 * p1 - 1.0).abs())
}

/// Product of the layer spectral norms: a Lipschitz bound for networks with
/// 1-Lipschitz activations.
pub fn lipschitz_upper(model: &Mlp) -> f64 {
    model.layer_spectral_norms(POWER_ITERS).iter().product()
}

/// Bound summary written by the `bounds` verb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub leakage: Vec<LeakageBoundResult>,
    pub tradeoff: Option<(TradeoffInputs, f64)>,
    pub dra_error: Option<f64>,
    pub advantage: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};
    use ndarray::array;

    #[test]
    fn inverse_binary_entropy_values() {
        assert!((inv_binary_entropy_lower(1.0).unwrap() - 0.19342).abs() < 1e-5);
        assert!((inv_binary_entropy_exact(1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((inv_binary_entropy_lower(0.5).unwrap() - 0.06974).abs() < 1e-5);
        let e = inv_binary_entropy_exact(0.5).unwrap();
        assert!((e - 0.1100).abs() < 1e-4);
        assert!((binary_entropy_bits(0.1100) - 0.4999).abs() < 1e-4);
        assert!(inv_binary_entropy_lower(1e-12).unwrap() < 1e-12);
        assert!(inv_binary_entropy_lower(0.0).is_err());
        assert!(inv_binary_entropy_lower(1.5).is_err());
    }

    #[test]
    fn leakage_bound_values() {
        assert!((mia_leakage_bound(1.0).unwrap() - 0.80658).abs() < 1e-5);
        assert_eq!(mia_leakage_bound(0.0).unwrap(), 1.0);
        assert!((mia_leakage_bound(0.5).unwrap() - 0.93026).abs() < 1e-5);
        assert!(mia_leakage_bound(-0.1).is_err());
    }

    #[test]
    fn conditional_entropy_examples() {
        let p = array![[0.5, 0.5], [0.5, 0.5]];
        let (a, b) = conditional_entropy_from_probs(p.view(), &[0, 1]).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let p = array![[0.9, 0.1], [0.9, 0.1], [0.9, 0.1]];
        let (a, b) = conditional_entropy_from_probs(p.view(), &[0, 0, 0]).unwrap();
        assert!((a - 0.4690).abs() < 1e-4);
        assert!((b - 0.1520).abs() < 1e-4);
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let (a, b) = conditional_entropy_from_probs(p.view(), &[0, 1]).unwrap();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
    }

    #[test]
    fn gamma_half_values() {
        assert!((gamma_half(1) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert_eq!(gamma_half(2), 1.0);
        assert!((gamma_half(3) - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert_eq!(gamma_half(8), 6.0);
        assert!((gamma_half(5) - 1.329_340_388_179_137).abs() < 1e-12);
    }

    #[test]
    fn dra_bound_examples() {
        let e2 = std::f64::consts::E.powi(2);
        let g = GeometrySpec {
            d: 2,
            p: 2,
            vol_boundary_x: 2.0 * e2,
            vol_boundary_eta: 1.0,
        };
        let v = dra_error_bound(0.0, &g).unwrap();
        assert!((v - 2.0 / (2.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((v - 0.7427).abs() < 1e-4);
        assert_eq!(dra_error_bound(1e6, &g).unwrap(), 0.0);
        let bad = GeometrySpec {
            vol_boundary_eta: 100.0,
            ..g
        };
        assert!(matches!(dra_error_bound(0.0, &bad), Err(Error::InvalidGeometry(_))));
        let cube = GeometrySpec::hypercube(12, 0.1).unwrap();
        assert_eq!(cube.vol_boundary_x, 24.0);
        assert!(dra_error_bound(0.5, &cube).unwrap() > 0.0);
    }

    #[test]
    fn tradeoff_examples() {
        let t = TradeoffInputs::new(0.5, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(tradeoff_bound(&t, ThreatVariant::Mia), 0.3);
        let t0 = TradeoffInputs::new(0.5, 1.0, 0.1, 0.0).unwrap();
        assert_eq!(tradeoff_bound(&t0, ThreatVariant::Pia), 0.5);
        let big = TradeoffInputs::new(0.5, 10.0, 1.0, 1.0).unwrap();
        assert_eq!(tradeoff_bound(&big, ThreatVariant::Dra), 0.0);
        assert!(TradeoffInputs::new(0.5, 1.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn advantage_examples() {
        let u = [1, 1, 0, 0];
        assert_eq!(empirical_advantage(&u, &u).unwrap(), 1.0);
        // 10 members, 10 non-members: TPR 0.8, FPR 0.3
        let u: Vec<usize> = (0..20).map(|i| (i < 10) as usize).collect();
        let d: Vec<usize> = (0..20).map(|i| if i < 10 { (i < 8) as usize } else { (i < 13) as usize }).collect();
        assert!((empirical_advantage(&d, &u).unwrap() - 0.5).abs() < 1e-12);
        assert!(empirical_advantage(&[0, 1], &[1, 1]).is_err());
        assert_eq!(dra_advantage(&[0.1, 0.1, 0.9, 0.9], &[0, 0, 1, 1], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn delta_examples() {
        let y = [1, 1, 0, 0, 1, 1, 1, 0];
        let u = [0, 0, 0, 0, 1, 1, 1, 1];
        assert!((delta_constants(&y, &u).unwrap().0 - 0.25).abs() < 1e-12);
        assert_eq!(delta_constants(&[1, 0, 1, 0], &[0, 0, 1, 1]).unwrap(), (0.0, 0.0));
        assert_eq!(delta_y(&[1, 1, 1]).unwrap(), 1.0);
        assert!(delta_constants(&[2, 0], &[0, 1]).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let two_i = Mlp::from_params(
            MlpSpec::new(vec![2, 2], Activation::Relu, Activation::Identity),
            vec![2.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        )
        .unwrap();
        assert!((lipschitz_upper(&two_i) - 2.0).abs() < 1e-12);
        let ii = Mlp::from_params(
            MlpSpec::new(vec![2, 2, 2], Activation::Relu, Activation::Identity),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        assert!((lipschitz_upper(&ii) - 1.0).abs() < 1e-12);
    }
}
