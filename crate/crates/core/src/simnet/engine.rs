use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::ProcessId;
use crate::rng::SimRng;

use super::{DelayModel, Metrics, Time};

/// A message destination: the ledger actor or a scenario process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Ledger,
    Process(ProcessId),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Ledger => f.write_str("ledger"),
            Endpoint::Process(p) => p.fmt(f),
        }
    }
}

impl From<ProcessId> for Endpoint {
    fn from(p: ProcessId) -> Self {
        Endpoint::Process(p)
    }
}

pub trait Payload {
    /// Bytes on the wire, used for transmission delay.
    fn wire_size(&self) -> u64;
}

pub trait Actor<M>: Any {
    fn on_start(&mut self, _ctx: &mut Context<'_, M>) {}

    fn on_message(&mut self, ctx: &mut Context<'_, M>, from: Endpoint, msg: M);

    fn as_any(&self) -> &dyn Any;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub time: Time,
    pub actor: Endpoint,
    pub text: String,
}

enum Route {
    Network { extra: Time },
    Local { delay: Time },
}

struct Outgoing<M> {
    to: Endpoint,
    msg: M,
    route: Route,
}

/// Handle passed to an actor while it processes one event.
pub struct Context<'a, M> {
    now: Time,
    me: Endpoint,
    outbox: &'a mut Vec<Outgoing<M>>,
    pub metrics: &'a mut Metrics,
    log: &'a mut Vec<LogEntry>,
    stop: &'a mut bool,
}

impl<M> Context<'_, M> {
    pub fn now(&self) -> Time {
        self.now
    }

    pub fn me(&self) -> Endpoint {
        self.me
    }

    /// Sends over the network; delivery after a sampled link delay.
    pub fn send(&mut self, to: impl Into<Endpoint>, msg: M) {
        self.send_after(0, to, msg);
    }

    /// Sends after `extra` local time (e.g. computation), then the link delay.
    pub fn send_after(&mut self, extra: Time, to: impl Into<Endpoint>, msg: M) {
        self.outbox.push(Outgoing { to: to.into(), msg, route: Route::Network { extra } });
    }

    /// Delivers `msg` back to this actor after exactly `delay`.
    pub fn schedule_self(&mut self, delay: Time, msg: M) {
        self.outbox.push(Outgoing { to: self.me, msg, route: Route::Local { delay } });
    }

    pub fn log(&mut self, text: impl Into<String>) {
        self.log.push(LogEntry { time: self.now, actor: self.me, text: text.into() });
    }

    /// Ends the run after the current event.
    pub fn stop(&mut self) {
        *self.stop = true;
    }
}

struct Event<M> {
    time: Time,
    seq: u64,
    from: Endpoint,
    to: Endpoint,
    msg: M,
}

impl<M> PartialEq for Event<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<M> Eq for Event<M> {}

impl<M> PartialOrd for Event<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Event<M> {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// An actor requested a stop.
    Stopped,
    /// No events remain.
    Quiescent,
    /// The next event lies beyond the horizon.
    Horizon,
}

/// A single-threaded discrete-event run over actors exchanging `M`.
pub struct Simulation<M> {
    now: Time,
    seq: u64,
    queue: BinaryHeap<Event<M>>,
    actors: BTreeMap<Endpoint, Box<dyn Actor<M>>>,
    delay: DelayModel,
    rng: SimRng,
    metrics: Metrics,
    log: Vec<LogEntry>,
    stopped: bool,
    started: bool,
    delivered: u64,
}

impl<M: Payload + 'static> Simulation<M> {
    pub fn new(delay: DelayModel, rng: SimRng) -> Self {
        Self {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            actors: BTreeMap::new(),
            delay,
            rng,
            metrics: Metrics::default(),
            log: Vec::new(),
            stopped: false,
            started: false,
            delivered: 0,
        }
    }

    pub fn add_actor(&mut self, at: impl Into<Endpoint>, actor: Box<dyn Actor<M>>) {
        self.actors.insert(at.into(), actor);
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn delay_model(&self) -> &DelayModel {
        &self.delay
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn actor<T: 'static>(&self, at: impl Into<Endpoint>) -> Option<&T> {
        self.actors.get(&at.into()).and_then(|a| a.as_any().downcast_ref())
    }

    /// Injects a message from `from` to `to`, delivered at `time`.
    pub fn inject(&mut self, time: Time, from: Endpoint, to: Endpoint, msg: M) {
        self.push(time, from, to, msg);
    }

    fn push(&mut self, time: Time, from: Endpoint, to: Endpoint, msg: M) {
        self.seq += 1;
        self.queue.push(Event { time, seq: self.seq, from, to, msg });
    }

    fn flush(&mut self, from: Endpoint, outbox: &mut Vec<Outgoing<M>>) {
        for out in outbox.drain(..) {
            let at = match out.route {
                Route::Local { delay } => self.now + delay,
                Route::Network { extra } => {
                    let size = out.msg.wire_size();
                    self.now + extra + self.delay.sample(from, out.to, size, &mut self.rng)
                }
            };
            self.push(at, from, out.to, out.msg);
        }
    }

    fn dispatch(&mut self, to: Endpoint, f: impl FnOnce(&mut dyn Actor<M>, &mut Context<'_, M>)) {
        let mut outbox = Vec::new();
        let Some(actor) = self.actors.get_mut(&to) else {
            return;
        };
        let mut ctx = Context {
            now: self.now,
            me: to,
            outbox: &mut outbox,
            metrics: &mut self.metrics,
            log: &mut self.log,
            stop: &mut self.stopped,
        };
        f(actor.as_mut(), &mut ctx);
        self.flush(to, &mut outbox);
    }

    /// Clears a stop request so that `run` continues with the pending events.
    pub fn resume(&mut self) {
        self.stopped = false;
    }

    /// Starts every actor (in endpoint order) and runs until a stop,
    /// quiescence, or the first event later than `horizon`.
    pub fn run(&mut self, horizon: Time) -> RunOutcome {
        if !self.started {
            self.started = true;
            let ids: Vec<Endpoint> = self.actors.keys().copied().collect();
            for id in ids {
                self.dispatch(id, |a, ctx| a.on_start(ctx));
            }
        }
        loop {
            if self.stopped {
                return RunOutcome::Stopped;
            }
            let Some(next) = self.queue.peek() else {
                return RunOutcome::Quiescent;
            };
            if next.time > horizon {
                return RunOutcome::Horizon;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.delivered += 1;
            self.dispatch(ev.to, |a, ctx| a.on_message(ctx, ev.from, ev.msg));
        }
    }
}
