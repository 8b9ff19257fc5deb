//! Whole-pipeline properties on simulated scenes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swarm_odom::harness::{run, Agent, Mode, Preset, RunOutput, ScenarioConfig};
use swarm_odom::manifold::Vec3;
use swarm_odom::sensor_sim::{make_scenario, synth_imu, synth_scan};

fn run_cfg(cfg: &ScenarioConfig) -> RunOutput {
    run(cfg).unwrap_or_else(|e| panic!("{:?} seed {}: {e}", cfg.world.preset, cfg.seed))
}

/// Columns of the per-scan CSV by header name.
fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(k).expect("field").parse().expect("number")).collect()
}

#[test]
fn single_drone_room_stays_accurate() {
    let cfg = ScenarioConfig::preset(Preset::Room, 1, 2, 30.0);
    let r = run_cfg(&cfg).report;
    let d = &r.drones[0];
    assert!(d.rmse < 0.1, "rmse {}", d.rmse);
    assert!(d.extrinsics.is_empty());
}

#[test]
fn gravity_norm_error_is_corrected() {
    let cfg = ScenarioConfig::preset(Preset::Room, 1, 4, 6.0);
    let sc = make_scenario(&cfg).unwrap();
    let d = &sc.drones[0];
    let trajs = sc.trajectories();
    let mut agent = Agent::new(d.id, &[], false, cfg.filter.clone(), cfg.detect.clone(), cfg.ident.clone()).unwrap();
    let mut imu_rng = ChaCha8Rng::seed_from_u64(40);
    let mut scan_rng = ChaCha8Rng::seed_from_u64(41);
    let dt = 1.0 / d.sensor.imu_rate;
    let period = d.sensor.scan_period;
    let mut k_imu = 0u64;
    let mut injected = false;
    let mut scans = 0;
    while (scans as f64) * period < 5.0 - 1e-9 {
        let t1 = (scans + 1) as f64 * period;
        while k_imu as f64 * dt <= t1 + 1e-9 {
            let s = synth_imu(&d.trajectory, k_imu as f64 * dt, &d.bias_gyro, &d.bias_acc, &sc.gravity, &d.sensor, &mut imu_rng)
                .unwrap();
            agent.push_imu(&s).unwrap();
            k_imu += 1;
            if !injected && agent.filter.is_initialized() {
                let g = agent.filter.state.gravity;
                agent.filter.state.gravity = g * (g.norm() + 0.2) / g.norm();
                injected = true;
            }
        }
        let scan = synth_scan(&sc.world, &trajs, d.id, (t1 - period, t1), &d.sensor, &mut scan_rng).unwrap();
        agent.step_scan(&scan, Vec::new()).unwrap();
        scans += 1;
    }
    assert!(injected);
    let norm = agent.filter.state.gravity.norm();
    assert!((norm - sc.gravity.norm()).abs() < 0.1, "|g| = {norm}");
}

#[test]
fn solo_mode_uses_only_point_residuals() {
    let mut cfg = ScenarioConfig::preset(Preset::Room, 3, 6, 12.0);
    cfg.mode = Mode::Solo;
    let solo = run_cfg(&cfg);
    assert!(column(&solo.csv, "active_res").iter().chain(&column(&solo.csv, "passive_res")).all(|v| *v == 0.0));
    assert!(column(&solo.csv, "point_res").iter().any(|v| *v > 0.0));
    assert!(solo.report.drones.iter().all(|d| !d.mutual_obs));

    cfg.mode = Mode::Swarm;
    let swarm = run_cfg(&cfg);
    assert!(column(&swarm.csv, "active_res").iter().any(|v| *v > 0.0));
    assert!(column(&swarm.csv, "passive_res").iter().any(|v| *v > 0.0));
}

/// Drone 2 of the wall scene faces the x = 0 wall from about 18.5 s on.
#[test]
fn single_plane_is_degenerate_without_teammates() {
    let seed = 2;
    let cfg = ScenarioConfig::preset(Preset::Wall, 3, seed, 50.0);
    let origin = make_scenario(&cfg).unwrap().drones[1].trajectory.eval(0.0).unwrap().rot;

    let mut solo_cfg = cfg.clone();
    solo_cfg.mode = Mode::Solo;
    let solo = run_cfg(&solo_cfg);
    let col = |name: &str| column(&solo.csv, name);
    let (t, drone) = (col("t"), col("drone"));
    let (ex, ey, ez) = (col("est_x"), col("est_y"), col("est_z"));
    let (gx, gy, gz) = (col("gt_x"), col("gt_y"), col("gt_z"));
    let mut worst_parallel: f64 = 0.0;
    for i in 0..t.len() {
        if drone[i] != 2.0 || t[i] > 18.5 + 30.0 {
            continue;
        }
        let e = origin.apply(&Vec3::new(ex[i] - gx[i], ey[i] - gy[i], ez[i] - gz[i]));
        worst_parallel = worst_parallel.max(Vec3::new(0.0, e.y, e.z).norm());
    }
    assert!(worst_parallel > 1.0, "parallel error only {worst_parallel}");

    let swarm = run_cfg(&cfg).report;
    let d2 = swarm.drone(2).unwrap();
    assert!(d2.rmse < 0.2, "swarm rmse {}", d2.rmse);
}

#[test]
fn extrinsic_refinement_does_not_lose_accuracy() {
    let mut improved = 0;
    let mut seen = Vec::new();
    for seed in 1..=10 {
        let r = run_cfg(&ScenarioConfig::preset(Preset::Room, 2, seed, 30.0)).report;
        let e = &r.drones[0].extrinsics[0];
        let (Some(init), Some(fin)) = (e.init_pos_err, e.final_pos_err) else {
            seen.push((seed, f64::NAN, f64::NAN));
            continue;
        };
        seen.push((seed, init, fin));
        if fin <= init {
            improved += 1;
        }
    }
    assert!(improved >= 8, "{seen:?}");
}
