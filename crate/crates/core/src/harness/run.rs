//! Simulation loop: synthesizes sensor data, drives every drone's agent,
//! routes messages and collects metrics.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

use super::agent::{Agent, ScanOutcome};
use super::config::ScenarioConfig;
use super::report::{
    compute_extrinsic_error, compute_rmse, csv_header, csv_line, BusSummary, CsvRow, DroneReport, ExtrinsicReport,
    ExtrinsicSample, IdentRecord, ReacqRecord, RunReport, TimingStats, SCHEMA_VERSION,
};
use crate::esikf::{FilterError, FilterInstance};
use crate::manifold::{Rotation, Vec3, EGO_DIM, EXT_DIM};
use crate::rng::{stream, tag};
use crate::sensor_sim::{make_scenario, synth_imu, synth_scan, DroneSetup, Scenario, SimError, TrueTrajectory, WorldModel};
use crate::swarm_net::{to_json_lines, Bus, CaptureRecord, Delivered};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("drone {drone}: {source}")]
    Filter { drone: u8, source: FilterError },
    #[error("{0}")]
    Setup(String),
    #[error("drone {drone} at t={t:.3}: invariant violated: {what}\n{dump}")]
    Invariant { drone: u8, t: f64, what: String, dump: String },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub csv: String,
    pub capture: Vec<CaptureRecord>,
}

impl RunOutput {
    /// Writes `run.csv`, `summary.json` and, if captured, `messages.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: &Path| {
            let p = path.display().to_string();
            move |source| RunError::Io { path: p, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        if !self.csv.is_empty() {
            let p = dir.join("run.csv");
            std::fs::write(&p, &self.csv).map_err(io(&p))?;
        }
        let p = dir.join("summary.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        std::fs::write(&p, json).map_err(io(&p))?;
        if !self.capture.is_empty() {
            let p = dir.join("messages.jsonl");
            std::fs::write(&p, to_json_lines(&self.capture)).map_err(io(&p))?;
        }
        Ok(())
    }
}

/// Rigid transform `(R, p)` acting as `x -> R x + p`.
type Pose = (Rotation, Vec3);

fn inverse_compose(a: &Pose, b: &Pose) -> Pose {
    (a.0.transpose().compose(&b.0), a.0.apply_inverse(&(b.1 - a.1)))
}

/// Simulator state of one drone.
struct Lane {
    setup: DroneSetup,
    origin: Pose,
    imu_rng: ChaCha8Rng,
    scan_rng: ChaCha8Rng,
    bias_g: Vec3,
    bias_a: Vec3,
    next_imu: u64,
    agent: Agent,
    // metrics
    estimates: Vec<(f64, Vec3)>,
    max_err: f64,
    last_err: (f64, f64),
    rows: Vec<CsvRow>,
    ext: Vec<ExtrinsicReport>,
    idents: Vec<IdentRecord>,
    reacqs: Vec<ReacqRecord>,
    update_s: Vec<f64>,
    scan_s: Vec<f64>,
}

impl Lane {
    /// True position in this drone's initial body frame.
    fn truth_pos(&self, t: f64) -> Vec3 {
        let k = self.setup.trajectory.eval_unchecked(t);
        inverse_compose(&self.origin, &(k.rot, k.pos)).1
    }

    fn advance_imu(&mut self, t_end: f64, gravity: &Vec3) -> Result<(), RunError> {
        let s = &self.setup.sensor;
        let dt = 1.0 / s.imu_rate;
        loop {
            let t = self.next_imu as f64 * dt;
            if t > t_end + 1e-9 {
                return Ok(());
            }
            if self.next_imu > 0 {
                let k = dt.sqrt();
                let n = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
                for i in 0..3 {
                    self.bias_g[i] += s.gyro_bias_walk * k * n(&mut self.imu_rng);
                    self.bias_a[i] += s.accel_bias_walk * k * n(&mut self.imu_rng);
                }
            }
            let sample = synth_imu(&self.setup.trajectory, t, &self.bias_g, &self.bias_a, gravity, s, &mut self.imu_rng)?;
            self.agent.push_imu(&sample).map_err(|source| RunError::Filter { drone: self.setup.id, source })?;
            self.next_imu += 1;
        }
    }

    fn process(
        &mut self,
        world: &WorldModel,
        trajs: &[TrueTrajectory],
        origins: &[(u8, Pose)],
        gravity: &Vec3,
        window: (f64, f64),
        inbox: Vec<Delivered>,
        series_interval: f64,
    ) -> Result<ScanOutcome, RunError> {
        self.advance_imu(window.1, gravity)?;
        let scan = synth_scan(world, trajs, self.setup.id, window, &self.setup.sensor, &mut self.scan_rng)?;
        let id = self.setup.id;
        let out = self.agent.step_scan(&scan, inbox).map_err(|source| RunError::Filter { drone: id, source })?;
        if let Some(what) = check_invariants(&self.agent.filter, &out) {
            return Err(RunError::Invariant { drone: id, t: window.1, what, dump: diagnostic_dump(&self.agent.filter) });
        }
        if out.processed {
            self.record(&out, trajs, origins, window.1, series_interval);
        }
        Ok(out)
    }

    fn record(&mut self, out: &ScanOutcome, trajs: &[TrueTrajectory], origins: &[(u8, Pose)], t: f64, series_interval: f64) {
        let k = self.setup.trajectory.eval_unchecked(t);
        let (gt_rot, gt_pos) = inverse_compose(&self.origin, &(k.rot, k.pos));
        let f: &FilterInstance = &self.agent.filter;
        let s = &f.state;
        let err = (s.ego_pos - gt_pos).norm();
        self.estimates.push((t, s.ego_pos));
        self.max_err = self.max_err.max(err);
        self.last_err = (err, s.ego_rot.angle_to(&gt_rot).to_degrees());
        self.update_s.push(out.update_secs);
        self.scan_s.push(out.total_secs);

        let truth = |mate: u8| -> Pose {
            let o = origins.iter().find(|(i, _)| *i == mate).map(|e| e.1).expect("teammate origin");
            inverse_compose(&self.origin, &o)
        };
        let k_series = (t / series_interval).round();
        let on_series = (t - k_series * series_interval).abs() < 1e-6;
        for e in &s.extrinsics {
            let rep = self.ext.iter_mut().find(|r| r.teammate == e.teammate_id).expect("extrinsic report");
            if !e.initialized {
                continue;
            }
            let (tr, tp) = truth(e.teammate_id);
            let (re, pe) = compute_extrinsic_error((&e.rot, &e.pos), (&tr, &tp));
            rep.final_rot_err_deg = Some(re);
            rep.final_pos_err = Some(pe);
            if on_series {
                rep.series.push(ExtrinsicSample { t, rot_err_deg: re, pos_err: pe });
            }
        }
        for ev in &out.identifications {
            let (tr, tp) = truth(ev.teammate);
            let (re, pe) = compute_extrinsic_error((&ev.estimate.rot, &ev.estimate.pos), (&tr, &tp));
            // The tracker must sit on the true teammate, not on another drone.
            let (r0, p0) = &self.origin;
            let nearest = trajs
                .iter()
                .filter(|tr| tr.drone_id != self.setup.id)
                .map(|tr| (tr.drone_id, r0.apply_inverse(&(tr.eval_unchecked(t).pos - p0))))
                .min_by(|a, b| (a.1 - ev.tracker_pos).norm().total_cmp(&(b.1 - ev.tracker_pos).norm()))
                .map(|e| e.0);
            let correct = nearest == Some(ev.teammate);
            if ev.initialized {
                let rep = self.ext.iter_mut().find(|r| r.teammate == ev.teammate).expect("extrinsic report");
                rep.init_time = Some(t);
                rep.init_rot_err_deg = Some(re);
                rep.init_pos_err = Some(pe);
            }
            self.idents.push(IdentRecord { t, teammate: ev.teammate, correct, initialized: ev.initialized, rot_err_deg: re, pos_err: pe });
        }
        for r in &out.reacquisitions {
            self.reacqs.push(ReacqRecord {
                t,
                teammate: r.teammate,
                gap: r.gap.gap,
                coast_s: r.gap.coast_scans as f64 * self.setup.sensor.scan_period,
            });
        }
        self.rows.push(CsvRow {
            t,
            drone: self.setup.id,
            est_rot: s.ego_rot,
            est_pos: s.ego_pos,
            gt_rot,
            gt_pos,
            point_residuals: out.stats.point_residuals,
            active_residuals: out.stats.active_residuals,
            passive_residuals: out.stats.passive_residuals,
            iterations: out.stats.iterations,
            map_points: f.map.len(),
            update_ms: out.update_secs * 1e3,
            scan_ms: out.total_secs * 1e3,
        });
    }
}

/// First violated runtime invariant, if any.
fn check_invariants(f: &FilterInstance, out: &ScanOutcome) -> Option<String> {
    if !f.is_initialized() {
        return None;
    }
    let s = &f.state;
    let vecs = [s.ego_pos, s.ego_vel, s.bias_gyro, s.bias_acc, s.gravity];
    if vecs.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
        return Some("non-finite state".into());
    }
    if s.ego_rot.orthonormality_error() > 1e-6 {
        return Some(format!("ego rotation off SO(3) by {:e}", s.ego_rot.orthonormality_error()));
    }
    for e in &s.extrinsics {
        if e.rot.orthonormality_error() > 1e-6 || !e.pos.iter().all(|x| x.is_finite()) {
            return Some(format!("extrinsic {} invalid", e.teammate_id));
        }
    }
    let c = &f.cov;
    if !c.iter().all(|x| x.is_finite()) {
        return Some("non-finite covariance".into());
    }
    let scale = c.amax().max(1e-300);
    if (c - c.transpose()).amax() > 1e-9 * scale {
        return Some("covariance not symmetric".into());
    }
    // Blocks of not-yet-identified teammates stay zero.
    let mut active: Vec<usize> = (0..EGO_DIM).collect();
    for (k, e) in s.extrinsics.iter().enumerate() {
        if e.initialized {
            active.extend((0..EXT_DIM).map(|j| EGO_DIM + k * EXT_DIM + j));
        }
    }
    let sub = c.select_rows(&active).select_columns(&active);
    if sub.cholesky().is_none() {
        return Some("covariance not positive definite".into());
    }
    if !f.mutual_obs() && out.stats.active_residuals + out.stats.passive_residuals > 0 {
        return Some("observation residuals used with mutual observation off".into());
    }
    None
}

fn diagnostic_dump(f: &FilterInstance) -> String {
    let s = &f.state;
    let diag: Vec<String> = (0..f.cov.nrows()).map(|i| format!("{:.3e}", f.cov[(i, i)])).collect();
    let mut d = format!(
        "  rot {:?}\n  pos {:?}\n  vel {:?}\n  bg {:?}\n  ba {:?}\n  g {:?}\n",
        s.ego_rot.matrix().as_slice(),
        s.ego_pos.as_slice(),
        s.ego_vel.as_slice(),
        s.bias_gyro.as_slice(),
        s.bias_acc.as_slice(),
        s.gravity.as_slice()
    );
    for e in &s.extrinsics {
        d.push_str(&format!("  ext {} init={} pos {:?}\n", e.teammate_id, e.initialized, e.pos.as_slice()));
    }
    d.push_str(&format!("  cov diag [{}]", diag.join(", ")));
    d
}

fn build_lanes(cfg: &ScenarioConfig, sc: &Scenario) -> Result<Vec<Lane>, RunError> {
    let ids: Vec<u8> = sc.drones.iter().map(|d| d.id).collect();
    let mut lanes = Vec::with_capacity(sc.drones.len());
    for d in &sc.drones {
        let mates: Vec<u8> = ids.iter().copied().filter(|i| *i != d.id).collect();
        let agent = Agent::new(d.id, &mates, d.mutual_obs, cfg.filter.clone(), cfg.detect.clone(), cfg.ident.clone())
            .map_err(RunError::Setup)?;
        let k0 = d.trajectory.eval(0.0)?;
        lanes.push(Lane {
            setup: d.clone(),
            origin: (k0.rot, k0.pos),
            imu_rng: stream(cfg.seed, &[tag::IMU, d.id as u64]),
            scan_rng: stream(cfg.seed, &[tag::SCAN, d.id as u64]),
            bias_g: d.bias_gyro,
            bias_a: d.bias_acc,
            next_imu: 0,
            agent,
            estimates: Vec::new(),
            max_err: 0.0,
            last_err: (0.0, 0.0),
            rows: Vec::new(),
            ext: mates.iter().map(|&m| ExtrinsicReport { teammate: m, ..ExtrinsicReport::default() }).collect(),
            idents: Vec::new(),
            reacqs: Vec::new(),
            update_s: Vec::new(),
            scan_s: Vec::new(),
        });
    }
    Ok(lanes)
}

/// Runs a whole scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    cfg.validate().map_err(|e| RunError::Setup(e.to_string()))?;
    let wall = Instant::now();
    let sc = make_scenario(cfg)?;
    let period = sc.drones[0].sensor.scan_period;
    if sc.drones.iter().any(|d| (d.sensor.scan_period - period).abs() > 1e-12) {
        return Err(RunError::Setup("all drones must share one scan period".into()));
    }
    let trajs = sc.trajectories();
    let origins: Vec<(u8, Pose)> = trajs
        .iter()
        .map(|t| t.eval(0.0).map(|k| (t.drone_id, (k.rot, k.pos))))
        .collect::<Result<_, _>>()?;
    let ids: Vec<u8> = sc.drones.iter().map(|d| d.id).collect();
    let bus = Bus::new(cfg.seed, cfg.channel.clone(), &ids, cfg.output.capture_msgs);
    let mut lanes = build_lanes(cfg, &sc)?;
    let n_scans = (cfg.duration / period + 1e-9).floor() as usize;
    let threads = cfg.threads.min(lanes.len()).max(1);
    let interval = cfg.output.series_interval;

    for k in 1..=n_scans {
        let t1 = k as f64 * period;
        let window = (t1 - period, t1);
        // Every drone reads its inbox before any drone sends.
        let mut inboxes: Vec<Vec<Delivered>> = ids.iter().map(|&id| bus.poll(id, t1)).collect();
        let results: Vec<Result<ScanOutcome, RunError>> = if threads <= 1 {
            lanes
                .iter_mut()
                .zip(inboxes.drain(..))
                .map(|(l, inbox)| l.process(&sc.world, &trajs, &origins, &sc.gravity, window, inbox, interval))
                .collect()
        } else {
            let per = lanes.len().div_ceil(threads);
            let mut boxes: Vec<Option<Vec<Delivered>>> = inboxes.drain(..).map(Some).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = lanes
                    .chunks_mut(per)
                    .zip(boxes.chunks_mut(per))
                    .map(|(ls, bs)| {
                        let (world, trajs, origins, g) = (&sc.world, &trajs, &origins, &sc.gravity);
                        scope.spawn(move || {
                            ls.iter_mut()
                                .zip(bs.iter_mut())
                                .map(|(l, b)| l.process(world, trajs, origins, g, window, b.take().unwrap_or_default(), interval))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        for r in results {
            for m in &r?.outgoing {
                bus.send(m, t1);
            }
        }
    }

    let stats = bus.stats();
    let mut update_s = Vec::new();
    let mut scan_s = Vec::new();
    let mut csv = String::new();
    if cfg.output.csv {
        csv.push_str(&csv_header(cfg.output.csv_timing));
        let mut rows: Vec<&CsvRow> = lanes.iter().flat_map(|l| l.rows.iter()).collect();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.drone.cmp(&b.drone)));
        for r in rows {
            csv.push_str(&csv_line(r, cfg.output.csv_timing));
        }
    }
    let mut drones = Vec::new();
    for l in &lanes {
        update_s.extend_from_slice(&l.update_s);
        scan_s.extend_from_slice(&l.scan_s);
        let bytes = stats.sent_bytes.get(&l.setup.id).copied().unwrap_or(0) as f64;
        let msgs = stats.sent_msgs.get(&l.setup.id).copied().unwrap_or(0) as f64;
        drones.push(DroneReport {
            id: l.setup.id,
            mutual_obs: l.setup.mutual_obs,
            scans: l.estimates.len(),
            rmse: compute_rmse(&l.estimates, |t| l.truth_pos(t)).unwrap_or(0.0),
            max_error: l.max_err,
            final_error: l.last_err.0,
            final_rot_err_deg: l.last_err.1,
            gravity_norm: l.agent.filter.state.gravity.norm(),
            bytes_per_s: bytes / cfg.duration,
            msgs_per_s: msgs / cfg.duration,
            map_points: l.agent.filter.map.len(),
            extrinsics: l.ext.clone(),
            identifications: l.idents.clone(),
            reacquisitions: l.reacqs.clone(),
        });
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        mode: cfg.mode,
        preset: cfg.world.preset,
        duration: cfg.duration,
        threads,
        drones,
        timing: TimingStats::from_samples(&update_s, &scan_s, wall.elapsed().as_secs_f64()),
        bus: BusSummary { delivered: stats.delivered, dropped: stats.dropped, corrupt: stats.corrupt },
    };
    Ok(RunOutput { report, csv, capture: bus.capture() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esikf::FilterParams;
    use crate::sensor_sim::ImuSample;

    fn initialized(mutual_obs: bool) -> FilterInstance {
        let mut f = FilterInstance::new(&[2], mutual_obs, FilterParams::default()).unwrap();
        let mut t = 0.0;
        while !f.is_initialized() {
            f.push_imu(&ImuSample { gyro: Vec3::zeros(), accel: Vec3::new(0.0, 0.0, 9.81), timestamp: t }).unwrap();
            t += 0.005;
        }
        f
    }

    #[test]
    fn healthy_filter_passes() {
        assert_eq!(check_invariants(&initialized(true), &ScanOutcome::default()), None);
        // Not yet initialized: the covariance is still all zeros.
        let f = FilterInstance::new(&[2], true, FilterParams::default()).unwrap();
        assert_eq!(check_invariants(&f, &ScanOutcome::default()), None);
    }

    #[test]
    fn violations_are_named() {
        let ok = ScanOutcome::default();
        let mut f = initialized(true);
        f.state.ego_pos.x = f64::NAN;
        assert_eq!(check_invariants(&f, &ok).as_deref(), Some("non-finite state"));

        let mut f = initialized(true);
        f.cov[(0, 1)] += 1e-3;
        assert_eq!(check_invariants(&f, &ok).as_deref(), Some("covariance not symmetric"));

        let mut f = initialized(true);
        f.cov[(4, 4)] = -1.0;
        assert_eq!(check_invariants(&f, &ok).as_deref(), Some("covariance not positive definite"));

        let f = initialized(false);
        let mut out = ScanOutcome::default();
        out.stats.passive_residuals = 1;
        assert!(check_invariants(&f, &out).unwrap().contains("mutual observation off"));
        assert!(diagnostic_dump(&f).contains("cov diag"));
    }
}
