//! Capacity-versus-demand damage rule: sharp threshold at zero
//! temperature, logistic smearing at finite temperature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain in which the stability margin is measured. Linear uses C - D in
/// intensity units; Log uses ln C - ln D, which weights relative rather
/// than absolute exceedance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginDomain {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DamageModel {
    /// Effective temperature in margin units; 0 recovers the sharp rule.
    pub temperature: f64,
    pub margin_domain: MarginDomain,
}

impl Default for DamageModel {
    fn default() -> Self {
        DamageModel {
            temperature: 0.0,
            margin_domain: MarginDomain::Linear,
        }
    }
}

impl DamageModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::validation(format!(
                "damage temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn margin(&self, capacity: f64, demand: f64) -> Result<f64> {
        match self.margin_domain {
            MarginDomain::Linear => Ok(capacity - demand),
            MarginDomain::Log => {
                if !(capacity > 0.0) || !(demand > 0.0) {
                    return Err(Error::numeric(format!(
                        "log margin needs positive capacity and demand, got C={capacity}, D={demand}"
                    )));
                }
                Ok(capacity.ln() - demand.ln())
            }
        }
    }
}

fn check_lengths(capacities: &[f64], demands: &[f64]) -> Result<()> {
    if capacities.len() != demands.len() {
        return Err(Error::validation(format!(
            "capacity vector has {} entries but demand vector has {}",
            capacities.len(),
            demands.len()
        )));
    }
    Ok(())
}

/// Per-site damage probability. At zero temperature this is the indicator
/// of D > C; ties (D == C) count as intact. At finite temperature it is
/// 1 / (1 + exp(M / T)) with stability margin M = C - D (or its log-domain
/// analogue), so a large positive margin drives the probability to zero.
pub fn damage_probabilities_into(
    model: &DamageModel,
    capacities: &[f64],
    demands: &[f64],
    out: &mut Vec<f64>,
) -> Result<()> {
    model.validate()?;
    check_lengths(capacities, demands)?;
    out.clear();
    if model.temperature == 0.0 {
        out.extend(
            capacities
                .iter()
                .zip(demands)
                .map(|(&c, &d)| if d > c { 1.0 } else { 0.0 }),
        );
        return Ok(());
    }
    for (&c, &d) in capacities.iter().zip(demands) {
        let m = model.margin(c, d)?;
        out.push(1.0 / (1.0 + (m / model.temperature).exp()));
    }
    Ok(())
}

/// Draws damage indicators. The zero-temperature path never touches the
/// RNG, so sharp and smeared runs with the same seed share demand draws.
pub fn damage_indicators_into<R: Rng>(
    model: &DamageModel,
    capacities: &[f64],
    demands: &[f64],
    rng: &mut R,
    out: &mut Vec<bool>,
) -> Result<()> {
    model.validate()?;
    check_lengths(capacities, demands)?;
    out.clear();
    if model.temperature == 0.0 {
        out.extend(capacities.iter().zip(demands).map(|(&c, &d)| d > c));
        return Ok(());
    }
    for (&c, &d) in capacities.iter().zip(demands) {
        let m = model.margin(c, d)?;
        let p = 1.0 / (1.0 + (m / model.temperature).exp());
        out.push(rng.random::<f64>() < p);
    }
    Ok(())
}

/// Fraction of buildings damaged.
pub fn damage_fraction(indicators: &[bool]) -> f64 {
    if indicators.is_empty() {
        return 0.0;
    }
    indicators.iter().filter(|&&i| i).count() as f64 / indicators.len() as f64
}

/// Cost-weighted loss as a fraction of total replacement value:
/// ratio * sum(cost_i over damaged) / sum(cost_i).
pub fn repair_cost_fraction(costs: &[f64], indicators: &[bool], ratio: f64) -> Result<f64> {
    if costs.len() != indicators.len() {
        return Err(Error::validation(format!(
            "cost vector has {} entries but indicator vector has {}",
            costs.len(),
            indicators.len()
        )));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::validation(format!(
            "repair cost ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let total: f64 = costs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::validation("total replacement cost must be positive"));
    }
    // fold, not sum: the empty f64 Sum is -0.0, and an all-intact
    // realization must report +0.0 cost.
    let damaged: f64 = costs
        .iter()
        .zip(indicators)
        .filter(|(_, &i)| i)
        .map(|(&c, _)| c)
        .fold(0.0, |acc, c| acc + c);
    Ok(ratio * damaged / total)
}

/// Ising spins: damaged maps to +1, intact to -1.
pub fn spins(indicators: &[bool]) -> Vec<f64> {
    indicators.iter().map(|&i| if i { 1.0 } else { -1.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sharp_rule_is_strict_on_ties() {
        let model = DamageModel::default();
        let mut out = Vec::new();
        damage_indicators_into(&model, &[1.0, 1.0, 1.0], &[1.0, 1.0000001, 0.9], &mut stream_rng(0, 0), &mut out)
            .unwrap();
        assert_eq!(out, vec![false, true, false]);
    }

    #[test]
    fn logistic_reference_values() {
        let lin = DamageModel { temperature: 0.5, margin_domain: MarginDomain::Linear };
        let mut p = Vec::new();
        damage_probabilities_into(&lin, &[2.0, 1.0], &[1.0, 1.0], &mut p).unwrap();
        assert_relative_eq!(p[0], 1.0 / (1.0 + 2f64.exp()), max_relative = 1e-14);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-14);

        let log = DamageModel { temperature: 0.5, margin_domain: MarginDomain::Log };
        damage_probabilities_into(&log, &[2.0], &[1.0], &mut p).unwrap();
        // ln 2 / 0.5 = ln 4, so P = 1/(1+4).
        assert_relative_eq!(p[0], 0.2, max_relative = 1e-14);
    }

    #[test]
    fn zero_temperature_probabilities_are_indicators() {
        let model = DamageModel { temperature: 0.0, margin_domain: MarginDomain::Log };
        let mut p = Vec::new();
        // Log domain at T=0 must not evaluate logs: a zero demand is fine.
        damage_probabilities_into(&model, &[1.0, 1.0], &[0.0, 2.0], &mut p).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn thermal_draws_match_probability() {
        let model = DamageModel { temperature: 0.5, margin_domain: MarginDomain::Linear };
        let mut rng = stream_rng(9, 0);
        let mut out = Vec::new();
        let n = 20_000;
        let mut hits = 0usize;
        for _ in 0..n {
            damage_indicators_into(&model, &[2.0], &[1.0], &mut rng, &mut out).unwrap();
            hits += out[0] as usize;
        }
        let p = 1.0 / (1.0 + 2f64.exp());
        let got = hits as f64 / n as f64;
        assert!((got - p).abs() < 0.01, "thermal rate {got} vs {p}");
    }

    #[test]
    fn higher_temperature_moves_probability_toward_half() {
        let mut last = 0.0;
        for &t in &[0.1, 0.5, 1.0, 5.0] {
            let model = DamageModel { temperature: t, margin_domain: MarginDomain::Linear };
            let mut p = Vec::new();
            damage_probabilities_into(&model, &[2.0], &[1.0], &mut p).unwrap();
            assert!(p[0] > last && p[0] < 0.5);
            last = p[0];
        }
    }

    #[test]
    fn cost_fraction_weights_by_replacement_cost() {
        let r = repair_cost_fraction(&[1.0, 3.0], &[true, false], 0.2).unwrap();
        assert_relative_eq!(r, 0.05, max_relative = 1e-14);
        assert!(repair_cost_fraction(&[1.0], &[true], 0.0).is_err());
        assert!(repair_cost_fraction(&[1.0], &[true, false], 0.2).is_err());
    }

    #[test]
    fn intact_portfolio_costs_positive_zero() {
        let r = repair_cost_fraction(&[1.0, 3.0], &[false, false], 0.2).unwrap();
        assert_eq!(r, 0.0);
        assert!(!r.is_sign_negative());
    }

    #[test]
    fn spin_map_is_plus_minus_one() {
        assert_eq!(spins(&[true, false]), vec![1.0, -1.0]);
    }

    proptest! {
        #[test]
        fn probabilities_stay_in_unit_interval(
            c in 1e-6f64..1e3,
            d in 1e-6f64..1e3,
            t in 0.0f64..10.0,
        ) {
            let model = DamageModel { temperature: t, margin_domain: MarginDomain::Linear };
            let mut p = Vec::new();
            damage_probabilities_into(&model, &[c], &[d], &mut p).unwrap();
            prop_assert!((0.0..=1.0).contains(&p[0]));
            if t == 0.0 {
                prop_assert_eq!(p[0], if d > c { 1.0 } else { 0.0 });
            }
        }
    }
}
