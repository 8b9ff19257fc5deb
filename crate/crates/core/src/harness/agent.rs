//! Per-drone processing pipeline for one scan.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use crate::detect_track::{detect, DetectParams, ReacquisitionGap, TeammateHint, TrackerKind, TrackerSet};
use crate::esikf::{ActiveObs, FilterError, FilterInstance, FilterParams, PassiveObs, UpdateStats};
use crate::ident::{identify, Candidate, ExtrinsicEstimate, IdentParams, TrajWindow};
use crate::manifold::Vec3;
use crate::sensor_sim::{ImuSample, LidarScan};
use crate::swarm_net::{is_stale, Delivered, EgoMsg, Message, ObsMsg, StaleFilter};

/// Ego messages older than this no longer drive teammate trackers, s.
const HINT_MAX_AGE: f64 = 1.0;
/// Ego messages kept per teammate for matching passive observations.
const EGO_HISTORY: usize = 8;
/// Own scan-end positions kept for passive-observation alignment, s.
const OWN_HISTORY: f64 = 1.0;
/// Scan points this close to a tracked object are kept out of the map, m.
const TRACK_EXCLUSION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentEvent {
    pub t: f64,
    pub teammate: u8,
    pub tracker_id: u32,
    /// Tracker position in this drone's global frame when identified.
    pub tracker_pos: Vec3,
    pub estimate: ExtrinsicEstimate,
    /// The identification initialized the extrinsic (as opposed to only
    /// re-labelling a tracker).
    pub initialized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReacqEvent {
    pub t: f64,
    pub teammate: u8,
    pub gap: ReacquisitionGap,
}

/// What one scan produced.
#[derive(Debug, Clone, Default)]
pub struct ScanOutcome {
    pub processed: bool,
    pub stats: UpdateStats,
    pub map_added: usize,
    pub clusters: usize,
    pub trackers: usize,
    pub identifications: Vec<IdentEvent>,
    pub reacquisitions: Vec<ReacqEvent>,
    pub outgoing: Vec<Message>,
    pub update_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug)]
pub struct Agent {
    pub id: u8,
    pub filter: FilterInstance,
    pub trackers: TrackerSet,
    detect: DetectParams,
    ident: IdentParams,
    received: BTreeMap<u8, TrajWindow>,
    egos: BTreeMap<u8, VecDeque<EgoMsg>>,
    inbox_obs: Vec<ObsMsg>,
    own_history: VecDeque<(f64, Vec3)>,
    seq: u32,
    reported_coast: BTreeMap<u8, f64>,
    stale: StaleFilter,
}

impl Agent {
    pub fn new(
        id: u8,
        teammates: &[u8],
        mutual_obs: bool,
        filter: FilterParams,
        detect: DetectParams,
        ident: IdentParams,
    ) -> Result<Self, String> {
        Ok(Agent {
            id,
            filter: FilterInstance::new(teammates, mutual_obs, filter)?,
            trackers: TrackerSet::new(),
            detect,
            ident,
            received: BTreeMap::new(),
            egos: BTreeMap::new(),
            inbox_obs: Vec::new(),
            own_history: VecDeque::new(),
            seq: 0,
            reported_coast: BTreeMap::new(),
            stale: StaleFilter::default(),
        })
    }

    pub fn push_imu(&mut self, s: &ImuSample) -> Result<(), FilterError> {
        self.filter.push_imu(s)
    }

    fn ingest(&mut self, inbox: Vec<Delivered>) {
        for d in inbox {
            if !self.stale.accept(&d.msg) {
                continue;
            }
            match d.msg {
                Message::Ego(m) if m.sender != self.id => {
                    let cap = self.detect.window;
                    self.received.entry(m.sender).or_insert_with(|| TrajWindow::new(cap)).push(m.timestamp, m.pos);
                    let h = self.egos.entry(m.sender).or_default();
                    h.push_back(m);
                    while h.len() > EGO_HISTORY {
                        h.pop_front();
                    }
                }
                Message::Obs(m) if m.observed == self.id && m.sender != self.id => self.inbox_obs.push(m),
                _ => {}
            }
        }
    }

    fn latest_ego(&self, id: u8) -> Option<&EgoMsg> {
        self.egos.get(&id).and_then(|h| h.back())
    }

    fn own_pos_at(&self, t: f64) -> Option<Vec3> {
        self.own_history.iter().find(|(tt, _)| (tt - t).abs() < 1e-6).map(|e| e.1)
    }

    /// Teammate states mapped through initialized extrinsics.
    fn hints(&self, t: f64) -> BTreeMap<u8, TeammateHint> {
        let mut out = BTreeMap::new();
        for e in &self.filter.state.extrinsics {
            if !e.initialized {
                continue;
            }
            let Some(m) = self.latest_ego(e.teammate_id) else { continue };
            if is_stale(m.timestamp, t, HINT_MAX_AGE) {
                continue;
            }
            let p = m.pos + m.vel * (t - m.timestamp);
            out.insert(e.teammate_id, TeammateHint { pos: e.rot.apply(&p) + e.pos, vel: e.rot.apply(&m.vel) });
        }
        out
    }

    /// Processes one scan: undistortion, detection, tracking, the filter
    /// update, map insertion and identification. Returns the messages to
    /// broadcast.
    pub fn step_scan(&mut self, scan: &LidarScan, inbox: Vec<Delivered>) -> Result<ScanOutcome, FilterError> {
        let start = Instant::now();
        self.ingest(inbox);
        let mut out = ScanOutcome::default();
        let t = scan.scan_end_time;
        if !self.filter.is_initialized() {
            return Ok(out);
        }
        self.filter.predict_to(t)?;
        let u = match self.filter.undistort_scan(scan) {
            Ok(u) => u,
            Err(FilterError::UndistortionUnavailable { .. }) => {
                self.filter.clear_trail();
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        out.processed = true;
        let clusters = detect(&u, &self.detect);
        out.clusters = clusters.len();
        let raw: Vec<Vec3> = u.points.iter().map(|p| p.pos_body).collect();
        let hints = self.hints(t);
        let prior_rot = self.filter.state.ego_rot;
        let prior_pos = self.filter.state.ego_pos;
        let track = self.trackers.step(t, &clusters, &raw, (&prior_rot, &prior_pos), &hints, &self.detect);

        let mut active = Vec::new();
        for &(id, body) in &track.active {
            let Some(m) = self.latest_ego(id) else { continue };
            if is_stale(m.timestamp, t, HINT_MAX_AGE) {
                continue;
            }
            active.push(ActiveObs { teammate_id: id, meas_body: body, teammate_pos: m.pos + m.vel * (t - m.timestamp) });
        }

        let max_age = self.filter.params().passive_max_age;
        let mut passive = Vec::new();
        for o in std::mem::take(&mut self.inbox_obs) {
            if is_stale(o.timestamp, t, max_age) {
                continue;
            }
            let sender_ego = self.egos.get(&o.sender).and_then(|h| h.iter().find(|e| (e.timestamp - o.timestamp).abs() < 1e-6));
            let Some(e) = sender_ego.copied() else {
                // The sender's pose for this time may still be in flight.
                self.inbox_obs.push(o);
                continue;
            };
            let Some(mine) = self.own_pos_at(o.timestamp) else { continue };
            passive.push(PassiveObs {
                sender_id: o.sender,
                meas_body: o.pos,
                sender_rot: e.rot,
                sender_pos: e.pos,
                self_offset: prior_pos - mine,
            });
        }

        // Static map points: low reflectivity and away from tracked objects.
        let near: Vec<Vec3> =
            self.trackers.trackers().iter().map(|tr| prior_rot.apply_inverse(&(tr.pos - prior_pos))).collect();
        let thr = self.detect.reflectivity_threshold;
        let pts: Vec<Vec3> = u
            .points
            .iter()
            .filter(|p| p.reflectivity < thr && near.iter().all(|c| (p.pos_body - c).norm() > TRACK_EXCLUSION))
            .map(|p| p.pos_body)
            .collect();

        let t_up = Instant::now();
        out.stats = self.filter.iterated_update(&pts, &active, &passive)?;
        out.update_secs = t_up.elapsed().as_secs_f64();
        out.map_added = self.filter.map_update(&pts);

        for (id, g) in track.reacquisitions {
            // One report per coasting episode.
            let began = t - g.coast_scans as f64 * scan.scan_period;
            match self.reported_coast.get(&id) {
                Some(b) if (b - began).abs() < 0.5 * scan.scan_period * g.coast_scans as f64 => continue,
                _ => {}
            }
            self.reported_coast.insert(id, began);
            out.reacquisitions.push(ReacqEvent { t, teammate: id, gap: g });
        }

        self.identify_step(t, &mut out);
        out.trackers = self.trackers.trackers().len();

        self.own_history.push_back((t, self.filter.state.ego_pos));
        while self.own_history.front().is_some_and(|(tt, _)| *tt < t - OWN_HISTORY) {
            self.own_history.pop_front();
        }
        let seq = self.next_seq();
        let s = &self.filter.state;
        out.outgoing.push(Message::Ego(EgoMsg {
            sender: self.id,
            seq,
            timestamp: t,
            rot: s.ego_rot,
            pos: s.ego_pos,
            vel: s.ego_vel,
        }));
        for &(id, body) in &track.active {
            let seq = self.next_seq();
            out.outgoing.push(Message::Obs(ObsMsg { sender: self.id, seq, timestamp: t, observed: id, pos: body }));
        }
        out.total_secs = start.elapsed().as_secs_f64();
        Ok(out)
    }

    fn next_seq(&mut self) -> u32 {
        let s = self.seq;
        self.seq = self.seq.wrapping_add(1);
        s
    }

    fn identify_step(&mut self, t: f64, out: &mut ScanOutcome) {
        let labelled: Vec<u8> = self
            .trackers
            .trackers()
            .iter()
            .filter_map(|tr| match tr.kind {
                TrackerKind::Teammate(id) => Some(id),
                TrackerKind::Temporary => None,
            })
            .collect();
        let received: BTreeMap<u8, TrajWindow> =
            self.received.iter().filter(|(id, _)| !labelled.contains(id)).map(|(id, w)| (*id, w.clone())).collect();
        if received.is_empty() {
            return;
        }
        let cands: Vec<Candidate<'_>> = self
            .trackers
            .trackers()
            .iter()
            .filter(|tr| tr.kind == TrackerKind::Temporary)
            .map(|tr| Candidate { tracker_id: tr.id, window: &tr.trajectory })
            .collect();
        if cands.is_empty() {
            return;
        }
        let found = identify(&cands, &received, &self.ident);
        for m in found {
            let pos = self.trackers.trackers().iter().find(|tr| tr.id == m.tracker_id).map(|tr| tr.pos).unwrap_or_default();
            if !self.trackers.promote(m.tracker_id, m.teammate_id) {
                continue;
            }
            let mut initialized = false;
            if self.filter.mutual_obs() {
                initialized = self.filter.init_extrinsic(m.teammate_id, &m.estimate, self.ident.thr).is_ok();
            }
            out.identifications.push(IdentEvent {
                t,
                teammate: m.teammate_id,
                tracker_id: m.tracker_id,
                tracker_pos: pos,
                estimate: m.estimate,
                initialized,
            });
        }
    }
}
