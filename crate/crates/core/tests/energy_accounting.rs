//! Meter-channel integration: exactness, latching and conservation.

mod common;

use std::thread;
use std::time::Duration;

use common::node::{identity_manifest, node};
use nnaccel::nodesim::server::{spawn_server, NodeClient, ServerOptions};
use nnaccel::nodesim::{FpgaState, NodeConfig, PowerProfile, CHANNELS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ten_percent_duty_cycle_is_11_6_mw() {
    let mut n = node(PowerProfile::fpga_only(0.0, 0.0, 5.0, 71.0), 0);
    // 1000 cycles at 100 MHz: 10 us running per inference
    n.load_manifest(identity_manifest(1000)).unwrap();
    n.fpga_on();
    n.read_channel(1).unwrap();
    for _ in 0..10 {
        n.run_inference(&[3]).unwrap();
        n.step_time(90.0).unwrap();
    }
    let (uw, samples) = n.read_channel(1).unwrap();
    assert_eq!(uw, 11_600);
    assert_eq!(samples, 20);
    assert_eq!(n.read_channel(1).unwrap().1, 0, "second read after latch");
}

proptest! {
    #[test]
    fn duty_cycle_average_is_exact(active in 1u64..500, idle in 1u64..500, p_run in 0u32..200, p_idle in 0u32..200) {
        let mut n = node(PowerProfile::fpga_only(0.0, 0.0, p_idle as f64, p_run as f64), 0);
        n.load_manifest(identity_manifest(active * 100)).unwrap();
        n.fpga_on();
        n.read_channel(1).unwrap();
        n.run_inference(&[0]).unwrap();
        n.step_time(idle as f64).unwrap();
        let energy = n.channel(1).unwrap().energy_pj;
        prop_assert_eq!(energy, (p_run as u64 * active + p_idle as u64 * idle) * 1000);
        let (uw, _) = n.read_channel(1).unwrap();
        let exact = (p_run as u64 * active + p_idle as u64 * idle) * 1000;
        let span = active + idle;
        prop_assert_eq!(uw, (exact + span / 2) / span);
    }
}

/// Replays a random script against the node while integrating the profile
/// independently; whole-µs dwells make both sides exact.
#[test]
fn energy_is_conserved_over_random_scripts() {
    let rows = [
        [20.0, 0.0, 0.0, 3.0, 0.0, 0.0, 2.0, 25.0],
        [35.0, 45.0, 6.0, 3.0, 0.0, 12.0, 4.0, 105.0],
        [20.0, 5.0, 1.0, 3.0, 0.0, 0.0, 2.0, 31.0],
        [20.0, 71.0, 4.0, 3.0, 0.0, 0.0, 5.0, 103.0],
    ];
    let profile = PowerProfile::new(rows).unwrap();
    let total_mw = |s: FpgaState| -> u128 {
        let idx = FpgaState::ALL.iter().position(|&x| x == s).unwrap();
        rows[idx].iter().sum::<f64>() as u128
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for script in 0..50 {
        let configure_us = rng.gen_range(0..20);
        let mut n = node(profile.clone(), configure_us);
        let cycles = rng.gen_range(1..50) * 100;
        n.load_manifest(identity_manifest(cycles)).unwrap();
        let mut expected_pj: u128 = 0;
        let mut state = FpgaState::Off;
        for _ in 0..200 {
            match rng.gen_range(0..7) {
                0 => {
                    if state == FpgaState::Off {
                        expected_pj += total_mw(FpgaState::Configuring) * configure_us as u128 * 1000;
                        state = FpgaState::Idle;
                    }
                    n.fpga_on();
                }
                1 => {
                    n.fpga_off();
                    state = FpgaState::Off;
                }
                2 | 3 => {
                    let ok = n.run_inference(&[1]).is_ok();
                    assert_eq!(ok, state == FpgaState::Idle);
                    if ok {
                        expected_pj += total_mw(FpgaState::Running) * (cycles as u128 / 100) * 1000;
                    }
                }
                4 => {
                    let us = rng.gen_range(1..100);
                    n.step_time(us as f64).unwrap();
                    expected_pj += total_mw(state) * us as u128 * 1000;
                }
                5 => {
                    n.read_channel(rng.gen_range(0..CHANNELS)).unwrap();
                }
                _ => {
                    n.stream_tick();
                }
            }
            assert_eq!(n.state(), state);
        }
        assert_eq!(n.injected_pj(), expected_pj, "script {script}");
        assert_eq!(n.read_out_pj() + n.pending_pj(), expected_pj, "script {script}");
        n.read_all();
        assert_eq!(n.read_out_pj(), expected_pj, "script {script}: read-out after final latch");
    }
}

#[test]
fn concurrent_stream_and_reads_lose_nothing() {
    let n = nnaccel::nodesim::Node::new(
        PowerProfile::fpga_only(1.0, 40.0, 5.0, 71.0),
        NodeConfig::default(),
    )
    .unwrap();
    let server = spawn_server("127.0.0.1:0", n, ServerOptions { wall_clock: true }).unwrap();
    let addr = server.local_addr();
    let manifest = identity_manifest(500).to_json_compact().into_bytes();

    let streamer = thread::spawn(move || {
        let mut c = NodeClient::connect(addr, Duration::from_secs(2)).unwrap();
        c.stream_start(1).unwrap();
        for _ in 0..40 {
            c.next_sample().unwrap();
        }
        c.stream_stop().unwrap();
    });
    let reader = thread::spawn(move || {
        let mut c = NodeClient::connect(addr, Duration::from_secs(2)).unwrap();
        c.load_manifest(&manifest).unwrap();
        c.fpga_on().unwrap();
        for k in 0..200u32 {
            c.read_channel((k % 8) as u8).unwrap();
            c.infer(&[k as i32]).unwrap();
        }
    });
    streamer.join().unwrap();
    reader.join().unwrap();
    let mut n = server.shutdown().unwrap();
    n.read_all();
    assert!(n.injected_pj() > 0);
    assert_eq!(n.read_out_pj(), n.injected_pj());
}
