use super::{Cell, ExperimentConfig, ResultTable};
use crate::error::{Error, Result};
use crate::field::{FieldSpec, Point};
use crate::mfbs::{d_factor, mfbs_covariance};

/// Small-increment ratios along `s_k = t + 2^{-k}·u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionSequences {
    pub ks: Vec<u32>,
    pub distances: Vec<f64>,
    /// `|B(t,s) − 1/2| / ‖t−s‖²`
    pub b_ratio: Vec<f64>,
    /// `|a(t,s)a(s,t) − 1| / ‖t−s‖²`
    pub a_ratio: Vec<f64>,
    /// Increment variance minus its two leading terms, over `‖t−s‖^r`.
    pub increment_ratio: Vec<f64>,
    /// Remainder order `r = min(2, 2H_low+1, 2H₁+2H₂)` at `t`.
    pub remainder_order: f64,
}

/// `B(t,s) = 2 D(H₁(t),H₁(s)) D(H₂(t),H₂(s))`.
fn b_coef(h_t: [f64; 2], h_s: [f64; 2]) -> Result<f64> {
    Ok(2.0 * d_factor(h_t[0], h_s[0])? * d_factor(h_t[1], h_s[1])?)
}

fn a_coef(field: &FieldSpec, t: Point, s: Point) -> Result<f64> {
    let (at, ht, hs) = (
        field.deformation.apply(t),
        field.eta_at(field.deformation.apply(t)),
        field.eta_at(field.deformation.apply(s)),
    );
    let b = b_coef(ht, hs)?;
    let scale = at[0].abs().powf(ht[0] - hs[0]) * at[1].abs().powf(ht[1] - hs[1]);
    Ok((scale - b) / b)
}

fn increment_variance(field: &FieldSpec, t: Point, s: Point) -> Result<f64> {
    let (u, v) = (field.deformation.apply(t), field.deformation.apply(s));
    let cov = |x, y| mfbs_covariance(x, y, &field.eta1, &field.eta2);
    Ok(cov(u, u)? + cov(v, v)? - 2.0 * cov(u, v)?)
}

pub fn expansion_sequences(
    field: &FieldSpec,
    t: Point,
    direction: [f64; 2],
    k_min: u32,
    k_max: u32,
) -> Result<ExpansionSequences> {
    let norm = direction[0].hypot(direction[1]);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Config("expansion direction must be a nonzero finite vector".into()));
    }
    if k_min > k_max {
        return Err(Error::Config("expansion needs k_min <= k_max".into()));
    }
    let u = [direction[0] / norm, direction[1] / norm];
    let at = field.deformation.apply(t);
    let h = field.eta_at(at);
    let j = field.deformation.jacobian(t);
    let r = 2f64.min(2.0 * h[0].min(h[1]) + 1.0).min(2.0 * (h[0] + h[1]));

    let mut out = ExpansionSequences {
        ks: Vec::new(),
        distances: Vec::new(),
        b_ratio: Vec::new(),
        a_ratio: Vec::new(),
        increment_ratio: Vec::new(),
        remainder_order: r,
    };
    for k in k_min..=k_max {
        let d = 2f64.powi(-(k as i32));
        let s = [t[0] + d * u[0], t[1] + d * u[1]];
        let hs = field.eta_at(field.deformation.apply(s));
        let b = b_coef(h, hs)?;
        let aa = a_coef(field, t, s)? * a_coef(field, s, t)?;
        let inc = [t[0] - s[0], t[1] - s[1]];
        let lin = |row: [f64; 2]| (row[0] * inc[0] + row[1] * inc[1]).abs();
        let lead = at[0].abs().powf(2.0 * h[0]) * lin(j[1]).powf(2.0 * h[1])
            + at[1].abs().powf(2.0 * h[1]) * lin(j[0]).powf(2.0 * h[0]);
        let theta = increment_variance(field, t, s)?;
        out.ks.push(k);
        out.distances.push(d);
        out.b_ratio.push((b - 0.5).abs() / (d * d));
        out.a_ratio.push((aa - 1.0).abs() / (d * d));
        out.increment_ratio.push((theta - lead).abs() / d.powf(r));
    }
    Ok(out)
}

/// A ratio sequence counts as bounded when its spread `max/min` is at most
/// `50`; a sequence that vanishes identically is bounded.
pub fn sequence_bounded(seq: &[f64]) -> bool {
    if seq.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let max = seq.iter().copied().fold(0.0, f64::max);
    let min = seq.iter().copied().fold(f64::INFINITY, f64::min);
    max == 0.0 || (min > 0.0 && max / min <= 50.0)
}

pub fn run_expansion_checks(config: &ExperimentConfig) -> Result<ResultTable> {
    let o = &config.options.expansion;
    let t = o.t.unwrap_or_else(|| config.sim.domain.center());
    if !config.sim.domain.contains(t) {
        return Err(Error::Config(format!("expansion point ({}, {}) lies outside the domain", t[0], t[1])));
    }
    let seq = expansion_sequences(&config.sim.field, t, o.direction, o.k_min, o.k_max)?;
    let mut table = ResultTable::new(&["k", "distance", "b_ratio", "a_ratio", "increment_ratio"]);
    for i in 0..seq.ks.len() {
        table.push(vec![
            (seq.ks[i] as usize).into(),
            seq.distances[i].into(),
            seq.b_ratio[i].into(),
            seq.a_ratio[i].into(),
            seq.increment_ratio[i].into(),
        ]);
    }
    table.push(vec![
        "bounded".into(),
        Cell::Num(f64::NAN),
        sequence_bounded(&seq.b_ratio).into(),
        sequence_bounded(&seq.a_ratio).into(),
        sequence_bounded(&seq.increment_ratio).into(),
    ]);
    table.meta("remainder_order", format!("{}", seq.remainder_order));
    super::stamp(&mut table, config);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DesignLaw, ScalarField};

    fn linear_field() -> FieldSpec {
        let mut f = FieldSpec::isotropic(0.5, DesignLaw::grid(2, 2));
        f.eta1 = ScalarField::Linear { c0: 0.4, c1: 0.1, c2: 0.0 };
        f.eta2 = ScalarField::constant(0.6);
        f
    }

    #[test]
    fn constant_eta_gives_exact_half() {
        let f = FieldSpec::isotropic(0.5, DesignLaw::grid(2, 2));
        let s = expansion_sequences(&f, [1.5, 1.5], [1.0, 1.0], 2, 10).unwrap();
        assert!(s.b_ratio.iter().all(|&v| v == 0.0));
        assert!(sequence_bounded(&s.b_ratio));
    }

    #[test]
    fn axis_increment_has_no_remainder_for_identity_constant() {
        let mut f = FieldSpec::isotropic(0.5, DesignLaw::grid(2, 2));
        f.eta1 = ScalarField::constant(0.3);
        f.eta2 = ScalarField::constant(0.7);
        let s = expansion_sequences(&f, [1.5, 1.5], [1.0, 0.0], 2, 10).unwrap();
        let scale = 1.5f64.powf(1.4);
        for (r, d) in s.increment_ratio.iter().zip(&s.distances) {
            // relative to the leading term, only rounding remains
            assert!(r * d.powf(s.remainder_order) <= 1e-12 * scale, "{r}");
        }
    }

    #[test]
    fn linear_eta_ratios_bounded() {
        let s = expansion_sequences(&linear_field(), [1.5, 1.5], [1.0, 1.0], 2, 10).unwrap();
        assert!(sequence_bounded(&s.b_ratio), "{:?}", s.b_ratio);
        assert!(sequence_bounded(&s.a_ratio), "{:?}", s.a_ratio);
        assert!(s.b_ratio.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn bounded_rule() {
        assert!(sequence_bounded(&[0.0, 0.0]));
        assert!(sequence_bounded(&[1.0, 50.0]));
        assert!(!sequence_bounded(&[1.0, 51.0]));
        assert!(!sequence_bounded(&[0.0, 1.0]));
        assert!(!sequence_bounded(&[f64::NAN]));
    }
}
