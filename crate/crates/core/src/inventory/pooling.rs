use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_std};

use super::{FragilityMarginal, Portfolio};

/// Replaces each building's fragility with a pooled lognormal shared by its
/// (structure_class, era) group: pooled mu is the mean of member median
/// ln-capacities, pooled beta the spread of those medians. This is the
/// coarse-categorization experiment; it deliberately erases within-group
/// differences, the way tabulated class curves do.
///
/// `era_breaks` are ascending construction years splitting groups into
/// eras; empty means class-only pooling. Groups whose members have nearly
/// identical medians fall back to the mean member dispersion so the pooled
/// beta stays positive.
pub fn pool_by_class(portfolio: &Portfolio, era_breaks: &[i32]) -> Result<Portfolio> {
    if era_breaks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            "era_breaks must be strictly ascending years",
        ));
    }
    let era_of = |year: i32| era_breaks.iter().filter(|&&b| year >= b).count();

    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, b) in portfolio.buildings().iter().enumerate() {
        groups
            .entry((b.structure_class.clone(), era_of(b.year_built)))
            .or_default()
            .push(i);
    }

    let mut pooled: Vec<Option<FragilityMarginal>> = vec![None; portfolio.len()];
    for ((class, era), members) in &groups {
        let medians: Vec<f64> = members
            .iter()
            .map(|&i| portfolio.buildings()[i].fragility.ln_median(0.0))
            .collect();
        let mu = mean(&medians);
        let spread = sample_std(&medians);
        let beta = if spread > 1e-3 {
            spread
        } else {
            let fallback = mean(
                &members
                    .iter()
                    .map(|&i| portfolio.buildings()[i].fragility.ln_dispersion())
                    .collect::<Vec<_>>(),
            );
            if !(fallback > 0.0) {
                return Err(Error::validation(format!(
                    "pooled group ({class}, era {era}) has no usable capacity spread"
                )));
            }
            fallback
        };
        for &i in members {
            pooled[i] = Some(FragilityMarginal::Lognormal { mu, beta });
        }
    }

    let mut out = portfolio.clone();
    for (b, f) in out.buildings.iter_mut().zip(pooled) {
        b.fragility = f.expect("every building belongs to a group");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::tests::small_building;

    #[test]
    fn pooling_collapses_within_class_medians() {
        let mut b1 = small_building("a", 0.0, 0.0);
        let mut b2 = small_building("b", 1.0, 0.0);
        let mut b3 = small_building("c", 2.0, 0.0);
        b1.fragility = FragilityMarginal::Lognormal { mu: -1.0, beta: 0.3 };
        b2.fragility = FragilityMarginal::Lognormal { mu: -1.4, beta: 0.3 };
        b3.fragility = FragilityMarginal::Lognormal { mu: -1.2, beta: 0.3 };
        let p = Portfolio::new(vec![b1, b2, b3]).unwrap();
        let pooled = pool_by_class(&p, &[]).unwrap();
        for b in pooled.buildings() {
            match b.fragility {
                FragilityMarginal::Lognormal { mu, beta } => {
                    assert!((mu - (-1.2)).abs() < 1e-12);
                    assert!((beta - 0.2).abs() < 1e-12, "beta {beta}");
                }
                _ => panic!("pooled fragility must be lognormal"),
            }
        }
    }

    #[test]
    fn era_breaks_split_groups() {
        let mut b1 = small_building("a", 0.0, 0.0);
        let mut b2 = small_building("b", 1.0, 0.0);
        b1.year_built = 1940;
        b2.year_built = 1990;
        b1.fragility = FragilityMarginal::Lognormal { mu: -1.5, beta: 0.3 };
        b2.fragility = FragilityMarginal::Lognormal { mu: -0.9, beta: 0.3 };
        let p = Portfolio::new(vec![b1, b2]).unwrap();
        let pooled = pool_by_class(&p, &[1975]).unwrap();
        let mus: Vec<f64> = pooled
            .buildings()
            .iter()
            .map(|b| b.fragility.ln_median(0.0))
            .collect();
        // Separate eras: each keeps its own median.
        assert!((mus[0] - (-1.5)).abs() < 1e-12);
        assert!((mus[1] - (-0.9)).abs() < 1e-12);
    }

    #[test]
    fn identical_members_fall_back_to_member_dispersion() {
        let p = Portfolio::new(vec![
            small_building("a", 0.0, 0.0),
            small_building("b", 1.0, 0.0),
        ])
        .unwrap();
        let pooled = pool_by_class(&p, &[]).unwrap();
        match pooled.buildings()[0].fragility {
            FragilityMarginal::Lognormal { beta, .. } => assert!((beta - 0.4).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn unsorted_era_breaks_rejected() {
        let p = Portfolio::new(vec![small_building("a", 0.0, 0.0)]).unwrap();
        assert!(pool_by_class(&p, &[1980, 1950]).is_err());
    }
}
