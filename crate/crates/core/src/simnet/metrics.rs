use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::Time;

/// Counter names.
pub mod counter {
    pub const DROPPED_VOTES: &str = "dropped_votes";
    pub const REJECTED_MODELS: &str = "rejected_models";
    pub const STORAGE_REJECTIONS: &str = "storage_rejections";
    pub const LEDGER_REJECTIONS: &str = "ledger_rejections";
    pub const STRAGGLERS: &str = "stragglers";
    pub const STORAGE_READS: &str = "storage_reads";
    pub const DROPPED_UPDATES: &str = "dropped_updates";

    pub const ALL: [&str; 7] = [
        DROPPED_VOTES,
        REJECTED_MODELS,
        STORAGE_REJECTIONS,
        LEDGER_REJECTIONS,
        STRAGGLERS,
        STORAGE_READS,
        DROPPED_UPDATES,
    ];

    pub const MAX_MODEL_DIVERGENCE: &str = "max_model_divergence";
}

/// Points in a round whose gaps form the latency segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Milestone {
    /// The round opens: task start commits, or the previous model certificate exists.
    RoundStart = 0,
    /// The first client update leaves its sender.
    FirstUpdate = 1,
    /// The committed NR transaction reaches the ledger.
    NrArrival = 2,
    /// The block holding that NR is cut.
    NrCommit = 3,
    /// A correct server holds every committed update.
    FetchDone = 4,
    /// A correct server holds the round's model certificate.
    ModelCert = 5,
}

/// Segment names, in round order.
pub const SEGMENTS: [&str; 5] = ["client_train", "update_collection", "block", "fetch", "aggregation"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    counters: BTreeMap<String, u64>,
    gauges: BTreeMap<String, f64>,
    milestones: BTreeMap<u64, [Option<Time>; 6]>,
}

impl Metrics {
    pub fn incr(&mut self, name: &str) {
        self.add(name, 1);
    }

    pub fn add(&mut self, name: &str, n: u64) {
        *self.counters.entry(name.to_string()).or_default() += n;
    }

    pub fn counter(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    /// Raises a gauge to `v` if larger.
    pub fn gauge_max(&mut self, name: &str, v: f64) {
        let g = self.gauges.entry(name.to_string()).or_insert(v);
        if v > *g {
            *g = v;
        }
    }

    pub fn gauge(&self, name: &str) -> Option<f64> {
        self.gauges.get(name).copied()
    }

    /// Records `at` for a milestone, keeping the earliest time seen.
    pub fn mark(&mut self, round: u64, m: Milestone, at: Time) {
        let slot = &mut self.milestones.entry(round).or_default()[m as usize];
        if slot.is_none_or(|t| at < t) {
            *slot = Some(at);
        }
    }

    pub fn milestone(&self, round: u64, m: Milestone) -> Option<Time> {
        self.milestones.get(&round).and_then(|ms| ms[m as usize])
    }

    /// The five segment durations of a fully observed round.
    pub fn segments(&self, round: u64) -> Option<[Time; 5]> {
        let ms = self.milestones.get(&round)?;
        let mut out = [0; 5];
        for i in 0..5 {
            let (a, b) = (ms[i]?, ms[i + 1]?);
            out[i] = b.checked_sub(a)?;
        }
        Some(out)
    }

    pub fn round_latency(&self, round: u64) -> Option<Time> {
        self.segments(round).map(|s| s.iter().sum())
    }

    pub fn rounds(&self) -> impl Iterator<Item = u64> + '_ {
        self.milestones.keys().copied()
    }

    /// CSV with columns `kind,round,name,value`; segment values in nanoseconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,round,name,value\n");
        for round in self.rounds() {
            if let Some(segs) = self.segments(round) {
                for (name, v) in SEGMENTS.iter().zip(segs) {
                    let _ = writeln!(out, "segment,{round},{name},{v}");
                }
                let _ = writeln!(out, "segment,{round},round_total,{}", segs.iter().sum::<Time>());
            }
        }
        let mut counters: BTreeMap<&str, u64> = counter::ALL.iter().map(|c| (*c, 0)).collect();
        for (k, v) in &self.counters {
            counters.insert(k, *v);
        }
        for (k, v) in counters {
            let _ = writeln!(out, "counter,,{k},{v}");
        }
        for (k, v) in &self.gauges {
            let _ = writeln!(out, "gauge,,{k},{v:e}");
        }
        out
    }
}
