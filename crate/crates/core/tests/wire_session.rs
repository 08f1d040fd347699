use std::io::BufReader;
use std::os::unix::net::UnixStream;
use std::thread;

use simgap::kernel::{ForgeConfig, Kernel, KernelSet, Transfer};
use simgap::lsq::AffineMap;
use simgap::manager::{run_managed_mission, ApplyMode, KernelManager, ManagerConfig, SimSession};
use simgap::oned::{Baseline, MissionSpec, OneDParams, OneDWorld, RewardMonitor, SimKind};
use simgap::state::StateVector;
use simgap::wire::{serve, LineSession};
use simgap::Error;

/// A kernel that stalls the robot around x = 6 and raises the terrain flag.
fn stall_kernels(p: &OneDParams) -> KernelSet {
    let schema = p.default_schema();
    let mut ks = KernelSet::empty(&schema, &ForgeConfig::default());
    ks.kernels.push(Kernel {
        id: 0,
        mean: StateVector(vec![6.0, 0.0]),
        sigma: 1.0,
        dist: [0.9, 0.1],
        transfer: Transfer {
            map: AffineMap {
                m: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
                b: vec![0.25, 1.0],
            },
            by_action: Vec::new(),
        },
        fit_window: 4,
    });
    ks
}

fn spawn_sim(world: OneDWorld) -> (UnixStream, thread::JoinHandle<Result<(), Error>>) {
    let (ours, theirs) = UnixStream::pair().unwrap();
    let handle = thread::spawn(move || {
        let mut world = world;
        let reader = BufReader::new(theirs.try_clone().unwrap());
        serve(&mut world, reader, theirs)
    });
    (ours, handle)
}

#[test]
fn remote_session_matches_in_process_world() {
    let p = OneDParams::default();
    let schema = p.default_schema();
    let ks = stall_kernels(&p);
    for index in 0..5 {
        let spec = MissionSpec {
            start: 0.5 * index as f64,
            region: None,
        };
        let cfg = ManagerConfig {
            apply_mode: ApplyMode::Always,
            ..ManagerConfig::default()
        };

        let mut local = OneDWorld::new(p, spec);
        let mut m1 = KernelManager::new(&ks, &schema, cfg).unwrap();
        let want = run_managed_mission(
            &mut local,
            &mut Baseline::new(&p),
            Some(&mut m1),
            RewardMonitor::new(&p),
            index as u64,
        )
        .unwrap();

        let (stream, server) = spawn_sim(OneDWorld::new(p, spec));
        let mut remote =
            LineSession::connect(BufReader::new(stream.try_clone().unwrap()), stream).unwrap();
        assert_eq!(
            remote.manifest().writable,
            vec!["position", "terrain_sensor"]
        );
        let mut m2 = KernelManager::new(&ks, &schema, cfg).unwrap();
        let got = run_managed_mission(
            &mut remote,
            &mut Baseline::new(&p),
            Some(&mut m2),
            RewardMonitor::new(&p),
            index as u64,
        )
        .unwrap();
        drop(remote);
        server.join().unwrap().unwrap();

        assert_eq!(got, want, "mission {index}");
        assert_eq!(m1.stats(), m2.stats());
        assert!(
            m2.stats().commands > 0,
            "kernel never fired in mission {index}"
        );
    }
}

#[test]
fn unmanaged_remote_deploy_mission_matches_local() {
    let p = OneDParams::default();
    let spec = MissionSpec::draw(SimKind::Deploy, &p, 42, 3);
    let want = run_managed_mission(
        &mut OneDWorld::new(p, spec),
        &mut Baseline::new(&p),
        None,
        RewardMonitor::new(&p),
        0,
    )
    .unwrap();
    let (stream, server) = spawn_sim(OneDWorld::new(p, spec));
    let mut remote =
        LineSession::connect(BufReader::new(stream.try_clone().unwrap()), stream).unwrap();
    let got = run_managed_mission(
        &mut remote,
        &mut Baseline::new(&p),
        None,
        RewardMonitor::new(&p),
        0,
    )
    .unwrap();
    drop(remote);
    server.join().unwrap().unwrap();
    assert_eq!(got, want);
}

#[test]
fn closed_simulator_is_a_session_error() {
    let (ours, theirs) = UnixStream::pair().unwrap();
    drop(theirs);
    let r = LineSession::connect(BufReader::new(ours.try_clone().unwrap()), ours);
    assert!(r.is_err());
}
