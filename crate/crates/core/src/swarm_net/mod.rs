//! Broadcast bus between drones with a lossy, delayed channel.

pub mod wire;

pub use wire::{decode, encode, EgoMsg, Message, ObsMsg, WireError, EGO_LEN, OBS_LEN};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    /// Independent per-delivery drop probability.
    pub drop_prob: f64,
    /// Base one-way latency, s.
    pub latency: f64,
    /// Uniform extra latency in `[0, jitter)`, s.
    pub jitter: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel { drop_prob: 0.0, latency: 0.01, jitter: 0.01 }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err("drop_prob must lie in [0, 1]".into());
        }
        if !(self.latency >= 0.0 && self.jitter >= 0.0) {
            return Err("latency and jitter must be non-negative".into());
        }
        Ok(())
    }

    /// Fate of one delivery: `None` if dropped, else the latency. Keyed by
    /// the delivery identity only, so it does not depend on send order.
    pub fn delivery(&self, seed: u64, sender: u8, seq: u32, receiver: u8) -> Option<f64> {
        let mut rng = stream(seed, &[tag::CHANNEL, sender as u64, seq as u64, receiver as u64]);
        let drop = rng.gen::<f64>() < self.drop_prob;
        let extra = if self.jitter > 0.0 { rng.gen_range(0.0..self.jitter) } else { 0.0 };
        (!drop).then_some(self.latency + extra)
    }
}

/// Whether a message stamped `msg_time` is too old to use at `now`.
pub fn is_stale(msg_time: f64, now: f64, max_age: f64) -> bool {
    now - msg_time > max_age
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub arrival: f64,
    pub msg: Message,
}

/// One delivery as written to a capture log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub send_time: f64,
    pub arrival: f64,
    pub receiver: u8,
    pub sender: u8,
    pub seq: u32,
    pub kind: String,
    /// The encoded message, lowercase hex.
    pub hex: String,
}

/// Drops messages whose timestamp does not advance past the last accepted
/// one from the same sender and of the same kind.
#[derive(Debug, Clone, Default)]
pub struct StaleFilter {
    last: BTreeMap<(u8, &'static str), f64>,
}

impl StaleFilter {
    pub fn accept(&mut self, msg: &Message) -> bool {
        let key = (msg.sender(), msg.kind());
        let t = msg.timestamp();
        match self.last.get(&key) {
            Some(&prev) if t < prev || (t == prev && msg.kind() == "ego") => false,
            _ => {
                self.last.insert(key, t);
                true
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BusStats {
    pub sent_msgs: BTreeMap<u8, u64>,
    pub sent_bytes: BTreeMap<u8, u64>,
    pub delivered: u64,
    pub dropped: u64,
    pub corrupt: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    send_time: f64,
    arrival: f64,
    sender: u8,
    seq: u32,
    bytes: Vec<u8>,
}

#[derive(Debug, Default)]
struct Inner {
    queues: BTreeMap<u8, Vec<Pending>>,
    stats: BusStats,
    capture: Option<Vec<CaptureRecord>>,
}

/// Shared broadcast medium. Safe to use from several threads; delivery
/// order and fate depend only on message identity and timing.
#[derive(Debug)]
pub struct Bus {
    seed: u64,
    model: ChannelModel,
    members: Vec<u8>,
    inner: Mutex<Inner>,
}

impl Bus {
    pub fn new(seed: u64, model: ChannelModel, members: &[u8], capture: bool) -> Self {
        let mut inner = Inner::default();
        for &m in members {
            inner.queues.insert(m, Vec::new());
        }
        if capture {
            inner.capture = Some(Vec::new());
        }
        Bus { seed, model, members: members.to_vec(), inner: Mutex::new(inner) }
    }

    pub fn members(&self) -> &[u8] {
        &self.members
    }

    /// Broadcasts `msg`, sent at `send_time`, to every other member.
    pub fn send(&self, msg: &Message, send_time: f64) {
        let bytes = encode(msg);
        let sender = msg.sender();
        let seq = msg.seq();
        let mut inner = self.inner.lock().expect("bus lock poisoned");
        *inner.stats.sent_msgs.entry(sender).or_default() += 1;
        *inner.stats.sent_bytes.entry(sender).or_default() += bytes.len() as u64;
        for &r in &self.members {
            if r == sender {
                continue;
            }
            match self.model.delivery(self.seed, sender, seq, r) {
                None => inner.stats.dropped += 1,
                Some(lat) => {
                    let p = Pending { send_time, arrival: send_time + lat, sender, seq, bytes: bytes.clone() };
                    inner.queues.entry(r).or_default().push(p);
                }
            }
        }
    }

    /// Removes and returns every message for `receiver` that has arrived by
    /// `now`, ordered by arrival time, sender and sequence number.
    pub fn poll(&self, receiver: u8, now: f64) -> Vec<Delivered> {
        let mut inner = self.inner.lock().expect("bus lock poisoned");
        let Some(q) = inner.queues.get_mut(&receiver) else { return Vec::new() };
        let mut ready: Vec<Pending> = Vec::new();
        q.retain(|p| {
            if p.arrival <= now {
                ready.push(p.clone());
                false
            } else {
                true
            }
        });
        ready.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.sender.cmp(&b.sender)).then(a.seq.cmp(&b.seq)));
        let mut out = Vec::with_capacity(ready.len());
        for p in ready {
            match decode(&p.bytes) {
                Ok(msg) => {
                    inner.stats.delivered += 1;
                    if let Some(cap) = inner.capture.as_mut() {
                        cap.push(CaptureRecord {
                            send_time: p.send_time,
                            arrival: p.arrival,
                            receiver,
                            sender: p.sender,
                            seq: p.seq,
                            kind: msg.kind().to_string(),
                            hex: hex::encode(&p.bytes),
                        });
                    }
                    out.push(Delivered { arrival: p.arrival, msg });
                }
                Err(_) => inner.stats.corrupt += 1,
            }
        }
        out
    }

    pub fn stats(&self) -> BusStats {
        self.inner.lock().expect("bus lock poisoned").stats.clone()
    }

    /// Captured deliveries in a thread-independent order.
    pub fn capture(&self) -> Vec<CaptureRecord> {
        let mut c = self.inner.lock().expect("bus lock poisoned").capture.clone().unwrap_or_default();
        c.sort_by(|a, b| {
            a.arrival
                .total_cmp(&b.arrival)
                .then(a.receiver.cmp(&b.receiver))
                .then(a.sender.cmp(&b.sender))
                .then(a.seq.cmp(&b.seq))
        });
        c
    }
}

/// One JSON object per line.
pub fn to_json_lines(records: &[CaptureRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("capture records serialize"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Vec3;

    fn obs(sender: u8, seq: u32, t: f64) -> Message {
        Message::Obs(ObsMsg { sender, seq, timestamp: t, observed: 9, pos: Vec3::new(1.0, 2.0, 3.0) })
    }

    #[test]
    fn broadcast_skips_sender_and_respects_latency() {
        let bus = Bus::new(1, ChannelModel { drop_prob: 0.0, latency: 0.05, jitter: 0.0 }, &[1, 2, 3], false);
        bus.send(&obs(1, 0, 1.0), 1.0);
        assert!(bus.poll(2, 1.04).is_empty());
        assert_eq!(bus.poll(2, 1.05).len(), 1);
        assert!(bus.poll(2, 2.0).is_empty());
        assert_eq!(bus.poll(3, 2.0).len(), 1);
        assert!(bus.poll(1, 2.0).is_empty());
    }

    #[test]
    fn poll_order_is_independent_of_send_order() {
        let m = ChannelModel::default();
        let a = Bus::new(5, m.clone(), &[1, 2, 3], false);
        let b = Bus::new(5, m, &[1, 2, 3], false);
        let msgs: Vec<Message> = (0..20).map(|k| obs(1 + (k % 2) as u8, k, 0.1 * k as f64)).collect();
        for x in &msgs {
            a.send(x, x.timestamp());
        }
        for x in msgs.iter().rev() {
            b.send(x, x.timestamp());
        }
        assert_eq!(a.poll(3, 10.0), b.poll(3, 10.0));
    }

    #[test]
    fn drop_rate_matches_the_model() {
        let bus = Bus::new(11, ChannelModel { drop_prob: 0.2, latency: 0.0, jitter: 0.0 }, &[1, 2], false);
        let n = 100_000;
        for k in 0..n {
            bus.send(&obs(1, k, 0.0), 0.0);
        }
        let got = bus.poll(2, 0.0);
        let frac = got.len() as f64 / n as f64;
        assert!((frac - 0.8).abs() < 0.01, "{frac}");
        // no duplicates
        let mut seqs: Vec<u32> = got.iter().map(|d| d.msg.seq()).collect();
        seqs.dedup();
        assert_eq!(seqs.len(), got.len());
        let s = bus.stats();
        assert_eq!(s.delivered + s.dropped, n as u64);
        assert_eq!(s.sent_bytes[&1], n as u64 * OBS_LEN as u64);
    }

    #[test]
    fn capture_is_json_lines() {
        let bus = Bus::new(1, ChannelModel::default(), &[1, 2], true);
        bus.send(&obs(1, 0, 0.0), 0.0);
        bus.send(&obs(2, 0, 0.0), 0.0);
        bus.poll(1, 1.0);
        bus.poll(2, 1.0);
        let text = to_json_lines(&bus.capture());
        assert_eq!(text.lines().count(), 2);
        for l in text.lines() {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            assert_eq!(v["kind"], "obs");
        }
    }

    #[test]
    fn captured_hex_decodes_to_the_delivered_message() {
        let bus = Bus::new(1, ChannelModel::default(), &[1, 2], true);
        let m = obs(1, 4, 0.5);
        bus.send(&m, 0.5);
        bus.poll(2, 1.0);
        let cap = bus.capture();
        assert_eq!(decode(&hex::decode(&cap[0].hex).unwrap()).unwrap(), m);
        assert_eq!((cap[0].send_time, cap[0].receiver), (0.5, 2));
    }

    #[test]
    fn non_monotone_messages_are_stale() {
        let mut f = StaleFilter::default();
        assert!(f.accept(&obs(1, 0, 1.0)));
        assert!(f.accept(&obs(1, 1, 1.0)));
        assert!(!f.accept(&obs(1, 2, 0.9)));
        assert!(f.accept(&obs(2, 0, 0.5)));
    }

    #[test]
    fn stale_filter() {
        assert!(!is_stale(1.0, 1.2, 0.2));
        assert!(is_stale(1.0, 1.21, 0.2));
    }
}
