use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::ProcessKind;

use super::{ms, Endpoint, Time};

/// One-way link latency, in milliseconds of simulated time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Latency {
    Fixed { ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
}

impl Latency {
    fn bounds(&self) -> (Time, Time) {
        match *self {
            Latency::Fixed { ms: v } => (ms(v).max(1), ms(v).max(1)),
            Latency::Uniform { lo_ms, hi_ms } => (ms(lo_ms).max(1), ms(hi_ms).max(1)),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Latency::Fixed { ms } => ms.is_finite() && ms > 0.0,
            Latency::Uniform { lo_ms, hi_ms } => lo_ms.is_finite() && hi_ms.is_finite() && lo_ms > 0.0 && lo_ms <= hi_ms,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Time {
        let (lo, hi) = self.bounds();
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }

    pub fn max(&self) -> Time {
        self.bounds().1
    }
}

impl Default for Latency {
    fn default() -> Self {
        Latency::Fixed { ms: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointClass {
    Ledger,
    Client,
    Server,
    Replica,
    Owner,
}

impl EndpointClass {
    pub fn of(ep: Endpoint) -> Self {
        match ep {
            Endpoint::Ledger => EndpointClass::Ledger,
            Endpoint::Process(p) => match p.kind {
                ProcessKind::Client => EndpointClass::Client,
                ProcessKind::Server => EndpointClass::Server,
                ProcessKind::Replica => EndpointClass::Replica,
                ProcessKind::ModelOwner => EndpointClass::Owner,
            },
        }
    }
}

/// Latency for links matching `from` → `to`; a missing side matches anything.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    #[serde(default)]
    pub from: Option<EndpointClass>,
    #[serde(default)]
    pub to: Option<EndpointClass>,
    pub latency: Latency,
}

/// Per-message delay: a sampled latency bounded by [`DelayModel::max_latency`]
/// plus a size-proportional transmission time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    #[serde(default)]
    pub latency: Latency,
    #[serde(default)]
    pub overrides: Vec<LinkOverride>,
    /// Link bandwidth in bytes per second; absent means instantaneous transmission.
    #[serde(default)]
    pub bandwidth_bytes_per_sec: Option<f64>,
}

impl DelayModel {
    pub fn fixed(ms: f64) -> Self {
        Self { latency: Latency::Fixed { ms }, ..Self::default() }
    }

    pub fn is_valid(&self) -> bool {
        self.latency.is_valid()
            && self.overrides.iter().all(|o| o.latency.is_valid())
            && self.bandwidth_bytes_per_sec.is_none_or(|b| b.is_finite() && b > 0.0)
    }

    fn latency_for(&self, from: Endpoint, to: Endpoint) -> &Latency {
        let (f, t) = (EndpointClass::of(from), EndpointClass::of(to));
        self.overrides
            .iter()
            .rev()
            .find(|o| o.from.is_none_or(|c| c == f) && o.to.is_none_or(|c| c == t))
            .map_or(&self.latency, |o| &o.latency)
    }

    /// Upper bound on the latency part of any link.
    pub fn max_latency(&self) -> Time {
        self.overrides.iter().map(|o| o.latency.max()).fold(self.latency.max(), Time::max)
    }

    pub fn transmission(&self, bytes: u64) -> Time {
        match self.bandwidth_bytes_per_sec {
            None => 0,
            Some(bw) => (bytes as f64 * 1e9 / bw).ceil() as Time,
        }
    }

    pub fn sample<R: Rng>(&self, from: Endpoint, to: Endpoint, bytes: u64, rng: &mut R) -> Time {
        self.latency_for(from, to).sample(rng) + self.transmission(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ProcessId;
    use crate::rng::stream;
    use crate::simnet::MILLIS;

    const A: Endpoint = Endpoint::Process(ProcessId::server(0));
    const B: Endpoint = Endpoint::Process(ProcessId::replica(0));

    #[test]
    fn fixed_latency_is_exact() {
        let d = DelayModel::fixed(5.0);
        assert_eq!(d.sample(A, B, 0, &mut stream(0, "d", 0)), 5 * MILLIS);
    }

    #[test]
    fn uniform_draws_stay_in_bounds() {
        let d = DelayModel { latency: Latency::Uniform { lo_ms: 1.0, hi_ms: 20.0 }, ..DelayModel::default() };
        let mut rng = stream(0, "d", 1);
        let (mut lo, mut hi) = (Time::MAX, 0);
        for _ in 0..100_000 {
            let v = d.sample(A, B, 0, &mut rng);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(lo >= MILLIS && hi <= 20 * MILLIS);
        assert!(hi <= d.max_latency());
        assert!(lo < 2 * MILLIS && hi > 19 * MILLIS);
    }

    #[test]
    fn override_and_transmission() {
        let d = DelayModel {
            latency: Latency::Fixed { ms: 5.0 },
            overrides: vec![LinkOverride {
                from: Some(EndpointClass::Server),
                to: None,
                latency: Latency::Fixed { ms: 1.0 },
            }],
            bandwidth_bytes_per_sec: Some(1e6),
        };
        let mut rng = stream(0, "d", 2);
        assert_eq!(d.sample(A, B, 1000, &mut rng), MILLIS + MILLIS);
        assert_eq!(d.sample(B, A, 0, &mut rng), 5 * MILLIS);
        assert_eq!(d.max_latency(), 5 * MILLIS);
    }
}
