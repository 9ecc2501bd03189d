//! Observable approximation `X̃(t)` of a sheet from its discrete observations.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, Sheet, SurfaceDataset};
use crate::par::Exec;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApproxKind {
    #[default]
    NearestNeighbor,
    PilotLocalAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ApproxPolicy {
    #[serde(default)]
    pub kind: ApproxKind,
    /// Sup-norm half-width of the pilot window. When absent the pilot uses
    /// `side · M_j^{-1/3}` per sheet.
    #[serde(default)]
    pub pilot_bandwidth: Option<f64>,
}

impl ApproxPolicy {
    pub fn nearest() -> Self {
        ApproxPolicy { kind: ApproxKind::NearestNeighbor, pilot_bandwidth: None }
    }

    pub fn pilot(b: f64) -> Self {
        ApproxPolicy { kind: ApproxKind::PilotLocalAverage, pilot_bandwidth: Some(b) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.pilot_bandwidth {
            Some(b) if !(b > 0.0 && b.is_finite()) => Err(Error::Config("pilot_bandwidth must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// How a query point maps onto a point set.
#[derive(Debug, Clone)]
enum Resolved {
    Nearest(usize),
    Window(Vec<usize>),
}

impl Resolved {
    fn value(&self, values: &[f64]) -> f64 {
        match self {
            Resolved::Nearest(i) => values[*i],
            Resolved::Window(ix) => ix.iter().map(|&i| values[i]).sum::<f64>() / ix.len() as f64,
        }
    }
}

fn pilot_bandwidth(policy: &ApproxPolicy, side: f64, m: usize) -> f64 {
    policy.pilot_bandwidth.unwrap_or_else(|| side * (m as f64).powf(-1.0 / 3.0))
}

fn resolve(index: &SpatialIndex, t: Point, policy: &ApproxPolicy, side: f64) -> Resolved {
    let nn = || Resolved::Nearest(index.nearest(t).expect("nonempty point set"));
    match policy.kind {
        ApproxKind::NearestNeighbor => nn(),
        ApproxKind::PilotLocalAverage => {
            let b = pilot_bandwidth(policy, side, index.points().len());
            let w = index.within_box(t, b);
            if w.is_empty() {
                nn()
            } else {
                Resolved::Window(w)
            }
        }
    }
}

/// `X̃(t)` for one sheet. `side` is the domain side length used by the
/// default pilot bandwidth.
pub fn approx_value(sheet: &Sheet, t: Point, policy: &ApproxPolicy, side: f64) -> Result<f64> {
    if sheet.is_empty() {
        return Err(Error::EmptySheet(sheet.id));
    }
    let index = SpatialIndex::new(Arc::clone(&sheet.points));
    Ok(resolve(&index, t, policy, side).value(&sheet.values))
}

/// `X̃⁽ʲ⁾(q)` for every query `q` and sheet `j`, laid out `[query][sheet]`.
/// Sheets sharing a point set (common designs) share one index and one
/// resolution per query.
pub fn approx_matrix(
    dataset: &SurfaceDataset,
    queries: &[Point],
    policy: &ApproxPolicy,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    if dataset.sheets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(s) = dataset.sheets.iter().find(|s| s.is_empty()) {
        return Err(Error::EmptySheet(s.id));
    }
    let side = dataset.domain.max_side();
    // Group sheets by point-set identity, in order of first appearance.
    let mut group_of: HashMap<*const Point, usize> = HashMap::new();
    let mut reps: Vec<usize> = Vec::new();
    let sheet_group: Vec<usize> = dataset
        .sheets
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let key = s.points.as_ptr();
            *group_of.entry(key).or_insert_with(|| {
                reps.push(j);
                reps.len() - 1
            })
        })
        .collect();
    let resolutions: Vec<Vec<Resolved>> = exec.map_slice(&reps, |&j| {
        let index = SpatialIndex::new(Arc::clone(&dataset.sheets[j].points));
        queries.iter().map(|&q| resolve(&index, q, policy, side)).collect()
    });
    Ok(exec.map_range(queries.len(), |qi| {
        dataset.sheets.iter().zip(&sheet_group).map(|(s, &g)| resolutions[g][qi].value(&s.values)).collect()
    }))
}
