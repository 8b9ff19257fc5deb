use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};

use swarm_odom::harness::{run, Mode, RunError, RunReport, ScenarioConfig};
use swarm_odom::swarm_net::{decode, encode, CaptureRecord};

#[derive(Parser)]
#[command(name = "swarm-odom", version, about = "Simulated multi-drone LiDAR-inertial odometry")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write run.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        /// 0 or 1 runs inline; N > 1 spreads drones over N threads.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the summary of a finished run.
    Report { rundir: PathBuf },
    /// Decode random and mutated buffers and check nothing panics.
    FuzzWire {
        #[arg(long, default_value_t = 1_000_000)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hex-dump a captured message log and check every record round-trips.
    DumpMsgs {
        capture: PathBuf,
        /// Only check, do not print.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, duration, out, mode, threads } => {
            let mut cfg = ScenarioConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = duration {
                cfg.duration = d;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            cfg.validate()?;
            let output = match run(&cfg) {
                Err(e @ RunError::Invariant { .. }) => {
                    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                    let p = out.join("invariant_dump.txt");
                    std::fs::write(&p, e.to_string()).with_context(|| format!("writing {}", p.display()))?;
                    eprintln!("{e}");
                    eprintln!("dump written to {}", p.display());
                    return Ok(ExitCode::from(1));
                }
                r => r?,
            };
            output.write(&out)?;
            print!("{}", output.report.render());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { rundir } => {
            let p = rundir.join("summary.json");
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let report: RunReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            print!("{}", report.render());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::FuzzWire { iterations, seed } => {
            let (ok, rejected) = fuzz_wire(iterations, seed);
            println!("{iterations} inputs: {ok} decoded, {rejected} rejected, no panics");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::DumpMsgs { capture, quiet } => dump_msgs(&capture, quiet),
    }
}

/// Decodes `n` inputs: half uniformly random, half bit-flipped or truncated
/// valid messages. A decoded message must re-encode to the same bytes.
fn fuzz_wire(n: u64, seed: u64) -> (u64, u64) {
    use swarm_odom::manifold::{Rotation, Vec3};
    use swarm_odom::swarm_net::{EgoMsg, Message, ObsMsg};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let seeds = [
        encode(&Message::Ego(EgoMsg {
            sender: 1,
            seq: 7,
            timestamp: 1.5,
            rot: Rotation::identity().plus(&Vec3::new(0.1, -0.2, 0.3)),
            pos: Vec3::new(1.0, 2.0, 3.0),
            vel: Vec3::new(0.1, 0.0, -0.1),
        })),
        encode(&Message::Obs(ObsMsg { sender: 2, seq: 9, timestamp: 2.0, observed: 1, pos: Vec3::new(3.0, 0.5, -0.2) })),
    ];
    let (mut ok, mut rejected) = (0, 0);
    for i in 0..n {
        let buf: Vec<u8> = if i % 2 == 0 {
            let len = rng.gen_range(0..160);
            (0..len).map(|_| rng.gen()).collect()
        } else {
            let mut b = seeds[rng.gen_range(0..seeds.len())].clone();
            for _ in 0..rng.gen_range(1..4) {
                let k = rng.gen_range(0..b.len());
                b[k] ^= 1 << rng.gen_range(0..8);
            }
            if rng.gen_bool(0.2) {
                b.truncate(rng.gen_range(0..b.len()));
            }
            b
        };
        match decode(&buf) {
            Ok(m) => {
                assert_eq!(encode(&m), buf, "decoded message does not re-encode bit-exactly");
                ok += 1;
            }
            Err(_) => rejected += 1,
        }
    }
    (ok, rejected)
}


fn dump_msgs(path: &Path, quiet: bool) -> Result<ExitCode> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::io::stdout().lock());
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptureRecord =
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad record", path.display(), i + 1))?;
        let bytes = hex::decode(&rec.hex).with_context(|| format!("{}:{}: bad hex", path.display(), i + 1))?;
        let msg = decode(&bytes).with_context(|| format!("{}:{}: undecodable message", path.display(), i + 1))?;
        if encode(&msg) != bytes {
            bail!("{}:{}: message does not round-trip", path.display(), i + 1);
        }
        if msg.sender() != rec.sender || msg.seq() != rec.seq || msg.kind() != rec.kind {
            bail!("{}:{}: header disagrees with record", path.display(), i + 1);
        }
        if !quiet {
            let mut text = format!(
                "{:>10.4} -> {:>10.4}  {} -> {}  #{:<6} {:<3} {} B\n",
                rec.send_time,
                rec.arrival,
                rec.sender,
                rec.receiver,
                rec.seq,
                rec.kind,
                bytes.len()
            );
            for chunk in bytes.chunks(16) {
                let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
                text.push_str(&format!("    {}\n", hex.join(" ")));
            }
            if out.write_all(text.as_bytes()).is_err() {
                // Reader went away (e.g. piped into `head`).
                return Ok(ExitCode::SUCCESS);
            }
        }
        n += 1;
    }
    let _ = writeln!(out, "{n} records round-trip");
    Ok(ExitCode::SUCCESS)
}
