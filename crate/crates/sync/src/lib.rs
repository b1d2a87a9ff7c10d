//! Synchronous data-parallel execution.
//!
//! A step runs one closure per replica on its own thread, waits for all of
//! them at a barrier, and averages their gradients with either a chunked
//! ring all-reduce or a gather-then-mean reference. The ring reduction is
//! simulated in-process but follows the real schedule: the flat gradient
//! vector is split into R near-equal chunks (chunk k spans
//! [floor(kL/R), floor((k+1)L/R))), a reduce-scatter phase walks each chunk
//! around the ring accumulating in ring order, and an all-gather phase
//! copies the finished chunks back to every replica. Summation order is
//! therefore fixed regardless of thread scheduling.

use calo_tensor::ParamGrads;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("invalid replica layout: {0}")]
    InvalidLayout(String),
    #[error("batch of {batch} cannot feed {replicas} replicas (empty shard)")]
    BatchTooSmall { batch: usize, replicas: usize },
    #[error("gradient shape mismatch between replicas: {0}")]
    ShapeMismatch(String),
    #[error("replica {replica} failed: {message}")]
    ReplicaFailed { replica: usize, message: String },
    #[error("replica {replica} panicked")]
    ReplicaPanicked { replica: usize },
}

pub type Result<T> = std::result::Result<T, SyncError>;

/// Error type replica closures may return; it aborts the whole step.
pub type ReplicaError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReductionKind {
    Ring,
    Naive,
}

/// Replica count and worker layout for one synchronous group.
#[derive(Clone, Debug)]
pub struct ReplicaGroup {
    pub workers: usize,
    pub replicas_per_worker: usize,
    pub reduction: ReductionKind,
    /// Fixed summation order; with the in-process schedule this always
    /// holds, the flag records the contract.
    pub deterministic_order: bool,
}

impl ReplicaGroup {
    pub fn new(workers: usize, replicas_per_worker: usize, reduction: ReductionKind) -> Result<Self> {
        if workers == 0 || replicas_per_worker == 0 {
            return Err(SyncError::InvalidLayout(format!(
                "workers = {workers}, replicas per worker = {replicas_per_worker}"
            )));
        }
        Ok(Self {
            workers,
            replicas_per_worker,
            reduction,
            deterministic_order: true,
        })
    }

    pub fn single() -> Self {
        Self {
            workers: 1,
            replicas_per_worker: 1,
            reduction: ReductionKind::Ring,
            deterministic_order: true,
        }
    }

    pub fn replicas(&self) -> usize {
        self.workers * self.replicas_per_worker
    }
}

/// Splits `batch` samples into `replicas` equal shards in original order.
/// The `batch mod replicas` remainder is dropped and reported.
pub fn shard_ranges(batch: usize, replicas: usize) -> Result<(Vec<std::ops::Range<usize>>, usize)> {
    if replicas == 0 {
        return Err(SyncError::InvalidLayout("zero replicas".into()));
    }
    if batch < replicas {
        return Err(SyncError::BatchTooSmall { batch, replicas });
    }
    let per = batch / replicas;
    let dropped = batch - per * replicas;
    let ranges = (0..replicas).map(|r| r * per..(r + 1) * per).collect();
    Ok((ranges, dropped))
}

/// Shards a slice by cloning each shard's elements.
pub fn shard_slice<T: Clone>(items: &[T], replicas: usize) -> Result<(Vec<Vec<T>>, usize)> {
    let (ranges, dropped) = shard_ranges(items.len(), replicas)?;
    Ok((
        ranges.into_iter().map(|r| items[r].to_vec()).collect(),
        dropped,
    ))
}

fn check_congruence(grads: &[ParamGrads]) -> Result<()> {
    let first = &grads[0];
    for (r, g) in grads.iter().enumerate().skip(1) {
        if g.len() != first.len() {
            return Err(SyncError::ShapeMismatch(format!(
                "replica {r} has {} gradient tensors, replica 0 has {}",
                g.len(),
                first.len()
            )));
        }
        for (i, (a, b)) in g.0.iter().zip(&first.0).enumerate() {
            if a.shape() != b.shape() {
                return Err(SyncError::ShapeMismatch(format!(
                    "tensor {i}: replica {r} has shape {:?}, replica 0 has {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
    }
    Ok(())
}

/// Gather-then-mean in replica-index order. The correctness oracle for the
/// ring implementation.
pub fn naive_allreduce(grads: &[ParamGrads]) -> Result<ParamGrads> {
    if grads.is_empty() {
        return Err(SyncError::InvalidLayout("no gradients to reduce".into()));
    }
    check_congruence(grads)?;
    let mut out = grads[0].clone();
    for g in &grads[1..] {
        out.add_assign(g);
    }
    out.scale(1.0 / grads.len() as f64);
    Ok(out)
}

/// Chunked ring all-reduce returning the element-wise mean.
pub fn ring_allreduce(grads: &[ParamGrads]) -> Result<ParamGrads> {
    if grads.is_empty() {
        return Err(SyncError::InvalidLayout("no gradients to reduce".into()));
    }
    check_congruence(grads)?;
    let r = grads.len();
    if r == 1 {
        return Ok(grads[0].clone());
    }
    let len = grads[0].total_elements();
    let bounds: Vec<usize> = (0..=r).map(|k| k * len / r).collect();
    let chunk = |c: usize| bounds[c]..bounds[c + 1];

    let mut bufs: Vec<Vec<f64>> = grads.iter().map(ParamGrads::to_flat).collect();

    // Reduce-scatter: at step s, node i accumulates chunk (i-1-s mod r)
    // received from node i-1. Each chunk is touched by exactly one node per
    // step, so the order of the inner loop does not matter.
    for s in 0..r - 1 {
        for i in 0..r {
            let src = (i + r - 1) % r;
            let c = (i + r - 1 - s % r + r) % r;
            let range = chunk(c);
            let incoming: Vec<f64> = bufs[src][range.clone()].to_vec();
            for (dst, v) in bufs[i][range].iter_mut().zip(incoming) {
                *dst += v;
            }
        }
    }
    // All-gather: node i overwrites chunk (i-s mod r) with the finished
    // copy held by node i-1.
    for s in 0..r - 1 {
        for i in 0..r {
            let src = (i + r - 1) % r;
            let c = (i + r - s % r) % r;
            let range = chunk(c);
            let incoming: Vec<f64> = bufs[src][range.clone()].to_vec();
            bufs[i][range].copy_from_slice(&incoming);
        }
    }
    let mut flat = std::mem::take(&mut bufs[0]);
    for v in &mut flat {
        *v /= r as f64;
    }
    ParamGrads::from_flat_like(&grads[0], &flat)
        .map_err(|e| SyncError::ShapeMismatch(e.to_string()))
}

pub fn allreduce(kind: ReductionKind, grads: &[ParamGrads]) -> Result<ParamGrads> {
    match kind {
        ReductionKind::Ring => ring_allreduce(grads),
        ReductionKind::Naive => naive_allreduce(grads),
    }
}

/// Per-replica output of one synchronous step.
pub struct SyncOutcome<T> {
    pub per_replica: Vec<T>,
    pub averaged: ParamGrads,
}

/// Runs one closure per replica concurrently, barriers, and averages their
/// gradients. Any replica error or panic aborts the step for all replicas;
/// the lowest-index failure is reported.
pub fn run_sync_step<T, F>(group: &ReplicaGroup, closures: Vec<F>) -> Result<SyncOutcome<T>>
where
    T: Send,
    F: FnOnce(usize) -> std::result::Result<(ParamGrads, T), ReplicaError> + Send,
{
    let r = group.replicas();
    if closures.len() != r {
        return Err(SyncError::InvalidLayout(format!(
            "{} closures for {r} replicas",
            closures.len()
        )));
    }
    let results: Vec<std::thread::Result<std::result::Result<(ParamGrads, T), ReplicaError>>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = closures
                .into_iter()
                .enumerate()
                .map(|(i, f)| scope.spawn(move || f(i)))
                .collect();
            handles.into_iter().map(|h| h.join()).collect()
        });

    let mut grads = Vec::with_capacity(r);
    let mut outputs = Vec::with_capacity(r);
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(Ok((g, out))) => {
                grads.push(g);
                outputs.push(out);
            }
            Ok(Err(e)) => {
                return Err(SyncError::ReplicaFailed {
                    replica: i,
                    message: e.to_string(),
                })
            }
            Err(_) => return Err(SyncError::ReplicaPanicked { replica: i }),
        }
    }
    let averaged = allreduce(group.reduction, &grads)?;
    Ok(SyncOutcome {
        per_replica: outputs,
        averaged,
    })
}
