//! Net economic value of competing study designs.

use super::config::CostModel;
use crate::error::{Error, Result};
use crate::nlreg::EvsiCurve;

#[derive(Debug, Clone)]
pub struct DesignInput {
    pub name: String,
    pub curve: EvsiCurve,
    pub cost: CostModel,
    /// Scales the per-decision EVSI to the population affected.
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub name: String,
    pub grid: Vec<f64>,
    /// Median-level EVSI.
    pub evsi: Vec<f64>,
    pub cost: Vec<f64>,
    pub net_value: Vec<f64>,
    pub optimal_n: f64,
    pub optimal_net_value: f64,
    /// Net value is negative at every grid point.
    pub never_worthwhile: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignComparison {
    /// Sorted by design name.
    pub designs: Vec<DesignResult>,
}

/// Net value population·EVSI(N) - cost(N) on the shared grid; the optimum
/// is the first grid maximum, so ties go to the smaller study.
pub fn compare_designs(inputs: &[DesignInput]) -> Result<DesignComparison> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("need at least one design to compare"))?;
    let mut designs = Vec::with_capacity(inputs.len());
    for d in inputs {
        if d.curve.grid != first.curve.grid {
            return Err(Error::invalid(format!(
                "design `{}` uses a different sample size grid from `{}`",
                d.name, first.name
            )));
        }
        if !(d.population >= 0.0) {
            return Err(Error::invalid("population must be ≥ 0"));
        }
        let median = d
            .curve
            .level_index(0.5)
            .ok_or_else(|| Error::invalid(format!("design `{}` has no median curve", d.name)))?;
        let grid = d.curve.grid.clone();
        let evsi = d.curve.evsi[median].clone();
        let cost: Vec<f64> = grid.iter().map(|&n| d.cost.cost(n)).collect();
        let net_value: Vec<f64> = evsi
            .iter()
            .zip(&cost)
            .map(|(e, c)| d.population * e - c)
            .collect();
        let mut best = 0;
        for (i, v) in net_value.iter().enumerate() {
            if *v > net_value[best] {
                best = i;
            }
        }
        designs.push(DesignResult {
            name: d.name.clone(),
            optimal_n: grid[best],
            optimal_net_value: net_value[best],
            never_worthwhile: net_value.iter().all(|&v| v < 0.0),
            grid,
            evsi,
            cost,
            net_value,
        });
    }
    designs.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = designs.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(Error::invalid(format!(
            "duplicate design name `{}`",
            w[0].name
        )));
    }
    Ok(DesignComparison { designs })
}
