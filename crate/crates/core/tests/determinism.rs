use djump::dynamics::{
    build_conditional_generator, jump_channels, run_trajectory, SimulationParams,
};
use djump::jumpstats::{flip_sweep, ProtocolSettings, SweepSettings};
use djump::rng::trajectory_rng;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn sweep_points_do_not_depend_on_thread_count() {
    let base = SimulationParams::default();
    let settings = SweepSettings {
        r_values: vec![0.1, 0.3, 1.0],
        trajectories_per_point: 5,
        t_max: 300.0,
        protocol: ProtocolSettings::default(),
    };
    let one = in_pool(1, || flip_sweep(&base, &settings).unwrap());
    let many = in_pool(6, || flip_sweep(&base, &settings).unwrap());
    assert_eq!(one, many);
}

#[test]
fn trajectories_replay_from_seed_and_index() {
    let params = SimulationParams {
        t_max: 50.0,
        ..SimulationParams::default()
    };
    let c12 = params.coupling().unwrap();
    let gen = build_conditional_generator(&params, &c12).unwrap();
    let channels = jump_channels(&params, &c12).unwrap();
    let run = |index| {
        run_trajectory(&params, &channels, &gen, &mut trajectory_rng(params.seed, index)).unwrap()
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert!(!a.events.is_empty());
    assert_ne!(a.events, run(4).events);
}
