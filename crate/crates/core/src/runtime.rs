//! Threaded execution: one OS thread per block, versioned block broadcasts and
//! staleness admission control.
//!
//! Every worker updates once per clock, so a worker's update count is the
//! global clock. Before computing update `c` a worker waits until it holds a
//! version `≥ c − s` of every peer block, then reads the newest cached version
//! not exceeding `c`. Peers may run up to `s` clocks ahead, so a short window
//! of versions is cached per peer.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use crate::engine::{step_bound_check, trace_from_iterates, Problem, Trace};
use crate::error::{Error, Result};
use crate::model::{sat_sub, ModelVector};
use crate::schedule::{validate, Schedule};

/// Versioned block broadcast. Version `v` carries `x_sender(v)`.
#[derive(Debug, Clone)]
pub struct BlockMessage {
    pub sender: usize,
    pub version: usize,
    pub payload: Arc<[f64]>,
}

/// One completed update: `worker` produced `x_worker(clock + 1)` after reading
/// peer block `j` at version `versions[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateEvent {
    pub worker: usize,
    pub clock: usize,
    pub versions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ThreadedOptions {
    /// Artificial compute delay per worker, applied before every update.
    pub pacing: Vec<Duration>,
    /// Abort when a worker waits this long without receiving anything.
    pub watchdog: Duration,
    pub strict: bool,
}

impl Default for ThreadedOptions {
    fn default() -> Self {
        Self { pacing: Vec::new(), watchdog: Duration::from_secs(10), strict: true }
    }
}

/// Per-worker mutable state, owned by the worker thread.
struct WorkerState {
    id: usize,
    own: Vec<f64>,
    clock: usize,
    cache: Vec<BTreeMap<usize, Arc<[f64]>>>,
}

impl WorkerState {
    fn newest(&self, j: usize) -> usize {
        self.cache[j].keys().next_back().copied().unwrap_or(0)
    }

    fn admitted(&self, s: usize) -> bool {
        let floor = sat_sub(self.clock, s);
        (0..self.cache.len()).all(|j| j == self.id || self.newest(j) >= floor)
    }

    fn insert(&mut self, msg: BlockMessage) {
        self.cache[msg.sender].insert(msg.version, msg.payload);
    }

    fn dump(&self) -> String {
        let peers: Vec<String> = (0..self.cache.len())
            .filter(|&j| j != self.id)
            .map(|j| format!("{j}@{}", self.newest(j)))
            .collect();
        format!("worker {} at clock {} holds [{}]", self.id, self.clock, peers.join(", "))
    }
}

struct WorkerCtx<'a> {
    problem: &'a Problem,
    eta: f64,
    s: usize,
    horizon: usize,
    pacing: Duration,
    watchdog: Duration,
    inbox: Receiver<BlockMessage>,
    peers: Vec<Option<Sender<BlockMessage>>>,
    collector: Sender<BlockMessage>,
}

fn worker_loop(mut st: WorkerState, ctx: WorkerCtx<'_>) -> Result<Vec<UpdateEvent>> {
    let layout = ctx.problem.layout().clone();
    let p = layout.num_blocks();
    let mut view = vec![0.0; layout.dim()];
    let mut out = vec![0.0; st.own.len()];
    let mut events = Vec::with_capacity(ctx.horizon);

    while st.clock < ctx.horizon {
        if !ctx.pacing.is_zero() {
            thread::sleep(ctx.pacing);
        }
        loop {
            while let Ok(msg) = ctx.inbox.try_recv() {
                st.insert(msg);
            }
            if st.admitted(ctx.s) {
                break;
            }
            match ctx.inbox.recv_timeout(ctx.watchdog) {
                Ok(msg) => st.insert(msg),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Runtime(format!("no progress within {:?}: {}", ctx.watchdog, st.dump())));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Runtime(format!("peers disconnected: {}", st.dump())));
                }
            }
        }

        let c = st.clock;
        let mut versions = vec![0; p];
        for j in 0..p {
            let range = layout.range(j);
            if j == st.id {
                versions[j] = c;
                view[range].copy_from_slice(&st.own);
                continue;
            }
            let (&v, block) = st.cache[j]
                .range(..=c)
                .next_back()
                .ok_or_else(|| Error::Runtime(format!("no admissible version: {}", st.dump())))?;
            versions[j] = v;
            view[range].copy_from_slice(block);
        }
        ctx.problem.block_update(st.id, &st.own, &view, ctx.eta, &mut out);
        std::mem::swap(&mut st.own, &mut out);
        st.clock = c + 1;

        let payload: Arc<[f64]> = Arc::from(st.own.as_slice());
        let msg = BlockMessage { sender: st.id, version: st.clock, payload };
        for tx in ctx.peers.iter().flatten() {
            // a finished peer has dropped its inbox
            let _ = tx.send(msg.clone());
        }
        ctx.collector
            .send(msg)
            .map_err(|_| Error::Runtime("trace collector stopped".into()))?;
        events.push(UpdateEvent { worker: st.id, clock: c, versions });

        let floor = sat_sub(st.clock, ctx.s);
        for cache in &mut st.cache {
            while cache.first_key_value().is_some_and(|(&v, _)| v < floor) {
                cache.pop_first();
            }
        }
    }
    Ok(events)
}

/// Assemble per-clock snapshots `x(0..=T)` from block broadcasts.
fn collect(rx: Receiver<BlockMessage>, x0: &ModelVector, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let layout = x0.layout().clone();
    let mut iterates = vec![x0.values().to_vec()];
    iterates.resize(horizon + 1, vec![0.0; layout.dim()]);
    let mut filled = vec![vec![false; layout.num_blocks()]; horizon + 1];
    for msg in rx.iter() {
        let slot = filled
            .get_mut(msg.version)
            .ok_or_else(|| Error::Runtime(format!("version {} beyond horizon", msg.version)))?;
        if std::mem::replace(&mut slot[msg.sender], true) {
            return Err(Error::Runtime(format!("duplicate version {} from worker {}", msg.version, msg.sender)));
        }
        iterates[msg.version][layout.range(msg.sender)].copy_from_slice(&msg.payload);
    }
    if let Some(t) = (1..=horizon).find(|&t| filled[t].iter().any(|f| !f)) {
        return Err(Error::Runtime(format!("clock {t} incomplete")));
    }
    Ok(iterates)
}

/// Rebuild the realized schedule from update events.
pub fn capture_schedule(p: usize, s: usize, horizon: usize, events: &[UpdateEvent]) -> Result<Schedule> {
    let mut schedule = Schedule::empty(p, s, horizon);
    for ev in events {
        if ev.worker >= p || ev.clock >= horizon {
            return Err(Error::Runtime(format!("event out of range: worker {} clock {}", ev.worker, ev.clock)));
        }
        if ev.versions.len() != p || ev.versions[ev.worker] != ev.clock {
            return Err(Error::Runtime(format!("malformed read set at clock {} worker {}", ev.clock, ev.worker)));
        }
        if schedule.is_active(ev.clock, ev.worker) {
            return Err(Error::Runtime(format!("duplicate update at clock {} worker {}", ev.clock, ev.worker)));
        }
        schedule.set_row(ev.clock, ev.worker, ev.versions.clone())?;
    }
    if schedule.num_records() != p * horizon {
        return Err(Error::Runtime(format!(
            "event log has {} updates, expected {}",
            schedule.num_records(),
            p * horizon
        )));
    }
    Ok(schedule)
}

/// Run `total_clocks` updates per worker on `p = problem.layout().num_blocks()`
/// threads. Returns the collected trace and the captured schedule.
pub fn run_threaded(
    problem: &Problem,
    s: usize,
    eta: f64,
    total_clocks: usize,
    x0: &ModelVector,
    opts: &ThreadedOptions,
) -> Result<(Trace, Schedule)> {
    let layout = problem.layout().clone();
    if x0.layout().as_ref() != layout.as_ref() {
        return Err(Error::Layout("initial point layout differs from the problem layout".into()));
    }
    let p = layout.num_blocks();
    if !opts.pacing.is_empty() && opts.pacing.len() != p {
        return Err(Error::Dimension { expected: p, got: opts.pacing.len() });
    }
    let beyond = step_bound_check(problem, eta, s, opts.strict)?;

    let (inbox_tx, inbox_rx): (Vec<_>, Vec<_>) = (0..p).map(|_| unbounded::<BlockMessage>()).unzip();
    let (coll_tx, coll_rx) = unbounded::<BlockMessage>();

    let (events, iterates) = thread::scope(|scope| {
        let mut handles = Vec::with_capacity(p);
        for (i, inbox) in inbox_rx.into_iter().enumerate() {
            let mut cache = vec![BTreeMap::new(); p];
            for (j, c) in cache.iter_mut().enumerate() {
                if j != i {
                    c.insert(0, Arc::<[f64]>::from(x0.block(j)));
                }
            }
            let state = WorkerState { id: i, own: x0.block(i).to_vec(), clock: 0, cache };
            let ctx = WorkerCtx {
                problem,
                eta,
                s,
                horizon: total_clocks,
                pacing: opts.pacing.get(i).copied().unwrap_or_default(),
                watchdog: opts.watchdog,
                inbox,
                peers: inbox_tx
                    .iter()
                    .enumerate()
                    .map(|(j, tx)| (j != i).then(|| tx.clone()))
                    .collect(),
                collector: coll_tx.clone(),
            };
            handles.push(scope.spawn(move || worker_loop(state, ctx)));
        }
        drop(inbox_tx);
        drop(coll_tx);
        let iterates = collect(coll_rx, x0, total_clocks);
        let mut events = Vec::with_capacity(p * total_clocks);
        let mut first_err = None;
        for h in handles {
            match h.join() {
                Ok(Ok(ev)) => events.extend(ev),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::Runtime("worker thread panicked".into()));
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok((events, iterates)),
        }
    })?;
    let iterates = iterates?;

    let schedule = capture_schedule(p, s, total_clocks, &events)?;
    let violations = validate(&schedule, s);
    if let Some(v) = violations.first() {
        return Err(Error::Runtime(format!("captured schedule violates the staleness bound: {v}")));
    }
    let trace = trace_from_iterates(problem, schedule.clone(), eta, iterates, beyond)?;
    Ok((trace, schedule))
}
