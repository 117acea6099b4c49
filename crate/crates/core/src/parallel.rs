//! Fan-out of the per-node elliptic solves.
//!
//! Node `j` of the conjugate half goes to worker `j mod W`. Workers only read
//! the shared problem and write to their own result slots, so the ensemble is
//! bitwise identical for every worker count.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use crate::contour::{ContourParams, QuadNode};
use crate::error::{Error, Result};

/// Anything that can produce the transformed solution at one contour point.
pub trait NodeSolver: Sync {
    fn solve_node(&self, z: Complex64) -> Result<Vec<Complex64>>;
}

impl<F> NodeSolver for F
where
    F: Fn(Complex64) -> Result<Vec<Complex64>> + Sync,
{
    fn solve_node(&self, z: Complex64) -> Result<Vec<Complex64>> {
        self(z)
    }
}

/// Transformed solutions at nodes `j = 0 .. N-1`; negative `j` are implied by conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformEnsemble {
    pub contour: ContourParams,
    pub nodes: Vec<QuadNode>,
    pub fields: Vec<Vec<Complex64>>,
}

impl TransformEnsemble {
    pub fn new(contour: ContourParams, fields: Vec<Vec<Complex64>>) -> Result<Self> {
        let nodes = contour.half_nodes();
        if fields.len() != nodes.len() {
            return Err(Error::Domain(format!(
                "ensemble has {} fields for {} nodes",
                fields.len(),
                nodes.len()
            )));
        }
        let len = fields.first().map_or(0, Vec::len);
        if fields.iter().any(|f| f.len() != len) {
            return Err(Error::Domain("ensemble fields differ in length".into()));
        }
        Ok(Self {
            contour,
            nodes,
            fields,
        })
    }

    pub fn field_len(&self) -> usize {
        self.fields.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleTiming {
    pub workers: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub workers: usize,
    pub wall_seconds: f64,
    pub speedup: f64,
}

impl SpeedupRow {
    pub fn efficiency(&self) -> f64 {
        self.speedup / self.workers as f64
    }
}

/// Speedups relative to the single-worker timing.
pub fn speedup_rows(timings: &[EnsembleTiming]) -> Result<Vec<SpeedupRow>> {
    let base = timings
        .iter()
        .find(|t| t.workers == 1)
        .ok_or_else(|| Error::Config("speedup table needs a single-worker run".into()))?;
    Ok(timings
        .iter()
        .map(|t| SpeedupRow {
            workers: t.workers,
            wall_seconds: t.wall_seconds,
            speedup: base.wall_seconds / t.wall_seconds,
        })
        .collect())
}

fn attempt<P: NodeSolver>(problem: &P, z: Complex64) -> std::result::Result<Vec<Complex64>, String> {
    match catch_unwind(AssertUnwindSafe(|| problem.solve_node(z))) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "worker panicked".into())),
    }
}

fn solve_with_retry<P: NodeSolver>(problem: &P, node: &QuadNode) -> Result<Vec<Complex64>> {
    attempt(problem, node.z)
        .or_else(|_| attempt(problem, node.z))
        .map_err(|reason| Error::Worker {
            node: node.j as usize,
            reason,
        })
}

/// Solves every conjugate-half node exactly once on `workers` threads.
/// The wall time covers the solves only.
pub fn solve_ensemble<P: NodeSolver>(
    problem: &P,
    contour: &ContourParams,
    workers: usize,
) -> Result<(TransformEnsemble, EnsembleTiming)> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let nodes = contour.half_nodes();
    let count = nodes.len();
    let start = Instant::now();
    let mut slots: Vec<Option<Result<Vec<Complex64>>>> = (0..count).map(|_| None).collect();
    if workers == 1 {
        for (slot, node) in slots.iter_mut().zip(&nodes) {
            *slot = Some(solve_with_retry(problem, node));
        }
    } else {
        let nodes = &nodes;
        let results: Vec<Vec<(usize, Result<Vec<Complex64>>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers.min(count))
                .map(|w| {
                    scope.spawn(move || {
                        (w..count)
                            .step_by(workers)
                            .map(|j| (j, solve_with_retry(problem, &nodes[j])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked outside a solve"))
                .collect()
        });
        for (j, r) in results.into_iter().flatten() {
            slots[j] = Some(r);
        }
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    let fields = slots
        .into_iter()
        .map(|s| s.expect("every node is assigned to a worker"))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        TransformEnsemble {
            contour: *contour,
            nodes,
            fields,
        },
        EnsembleTiming {
            workers,
            wall_seconds,
        },
    ))
}
