//! CSV output for flows, iteration traces, policies, Riccati coefficients and
//! conditional flows, plus readers for the first two.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::{Policy, ValueFunction};
use crate::error::{Error, Result};
use crate::lq::RiccatiSolution;
use crate::measures::{DiscreteMeasure, MeasureFlow, StateGrid};
use crate::mfg::IterationTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub t_index: usize,
    pub x: f64,
    pub weight: f64,
    pub cdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub residual: f64,
    pub monotone: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub k: usize,
    pub i: usize,
    pub x: f64,
    pub value: f64,
    /// Empty at the terminal time.
    pub control: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiRow {
    pub t: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub level: usize,
    pub node: usize,
    #[serde(rename = "B_value")]
    pub b_value: f64,
    pub prob: f64,
    pub mu: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn flow_rows(flow: &MeasureFlow) -> Vec<FlowRow> {
    let mut rows = Vec::with_capacity(flow.len() * flow.grid().len());
    for (k, mu) in flow.measures().iter().enumerate() {
        for (i, &x) in mu.grid().points().iter().enumerate() {
            rows.push(FlowRow {
                t_index: k,
                x,
                weight: mu.weights()[i],
                cdf: mu.cdf()[i],
            });
        }
    }
    rows
}

pub fn write_flow_csv(path: impl AsRef<Path>, flow: &MeasureFlow) -> Result<()> {
    write_rows(path.as_ref(), flow_rows(flow))
}

/// Rebuilds a flow from its rows. Measures are rebuilt from the CDF column.
pub fn flow_from_rows(rows: &[FlowRow]) -> Result<MeasureFlow> {
    let first = rows.first().ok_or_else(|| Error::Malformed("no flow rows".into()))?;
    let points: Vec<f64> = rows.iter().filter(|r| r.t_index == first.t_index).map(|r| r.x).collect();
    let m = points.len();
    let grid = Arc::new(StateGrid::from_points(points)?);
    if !rows.len().is_multiple_of(m) {
        return Err(Error::Malformed("flow rows do not tile the grid".into()));
    }
    let mut measures = Vec::with_capacity(rows.len() / m);
    for (k, chunk) in rows.chunks(m).enumerate() {
        if chunk.iter().any(|r| r.t_index != k) {
            return Err(Error::Malformed(format!("unexpected time index near block {k}")));
        }
        if chunk.iter().zip(grid.points()).any(|(r, &x)| r.x != x) {
            return Err(Error::Malformed(format!("grid changes at time index {k}")));
        }
        measures.push(DiscreteMeasure::from_cdf(grid.clone(), chunk.iter().map(|r| r.cdf).collect())?);
    }
    MeasureFlow::new(measures)
}

pub fn read_flow_csv(path: impl AsRef<Path>) -> Result<MeasureFlow> {
    flow_from_rows(&read_rows::<FlowRow>(path.as_ref())?)
}

pub fn trace_rows(trace: &IterationTrace) -> Vec<TraceRow> {
    (0..trace.residuals.len())
        .map(|n| TraceRow {
            iter: n + 1,
            residual: trace.residuals[n],
            monotone: trace.monotone[n],
            cost: trace.costs[n],
        })
        .collect()
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &IterationTrace) -> Result<()> {
    write_rows(path.as_ref(), trace_rows(trace))
}

pub fn write_trace_rows(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    write_rows(path.as_ref(), rows.iter().cloned())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    read_rows(path.as_ref())
}

pub fn write_policy_csv(
    path: impl AsRef<Path>,
    grid: &StateGrid,
    controls: &[f64],
    policy: &Policy,
    value: &ValueFunction,
) -> Result<()> {
    let rows = value.values.iter().enumerate().flat_map(|(k, row)| {
        row.iter().enumerate().map(move |(i, &v)| PolicyRow {
            k,
            i,
            x: grid.point(i),
            value: v,
            control: policy.controls.get(k).map(|p| controls[p[i]]),
        })
    });
    write_rows(path.as_ref(), rows)
}

pub fn read_policy_csv(path: impl AsRef<Path>) -> Result<Vec<PolicyRow>> {
    read_rows(path.as_ref())
}

pub fn write_riccati_csv(path: impl AsRef<Path>, solution: &RiccatiSolution) -> Result<()> {
    let rows = (0..solution.times.len()).map(|k| RiccatiRow {
        t: solution.times[k],
        a: solution.a[k],
        b: solution.b[k],
        c: solution.c[k],
        mean: solution.mean[k],
    });
    write_rows(path.as_ref(), rows)
}

pub fn write_conditional_csv(path: impl AsRef<Path>, rows: &[ConditionalRow]) -> Result<()> {
    write_rows(path.as_ref(), rows.iter().cloned())
}

pub fn read_conditional_csv(path: impl AsRef<Path>) -> Result<Vec<ConditionalRow>> {
    read_rows(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Arc::new(StateGrid::uniform(-1.0, 1.0, 5).unwrap());
        let init = DiscreteMeasure::from_weights(g.clone(), vec![0.1, 0.2, 0.3, 0.3, 0.1]).unwrap();
        let flow = MeasureFlow::anchored(&init, &DiscreteMeasure::dirac(g, 4).unwrap(), 3).unwrap();
        let path = dir.path().join("flow.csv");
        write_flow_csv(&path, &flow).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t_index,x,weight,cdf\n"));
        let back = read_flow_csv(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.distance(&flow).unwrap(), 0.0);
    }

    #[test]
    fn headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cn.csv");
        write_conditional_csv(
            &path,
            &[ConditionalRow {
                level: 0,
                node: 0,
                b_value: 0.0,
                prob: 1.0,
                mu: 0.5,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("level,node,B_value,prob,mu\n"));
    }
}
