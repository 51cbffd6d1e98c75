mod common;

use common::*;
use ris_secrecy::altmin::{optimize, run_batch, AltMinConfig};
use ris_secrecy::channel::{ChannelParams, NodeLayout, NoiseConfig};
use ris_secrecy::rates::RisMode;

fn joint_case(seed: u64, mode: RisMode, p_i: f64) {
    let mut r = rng(seed);
    let (ch, noise) = unit_instance(&mut r, 1, 1);
    let rbar = 0.7;
    let cfg = AltMinConfig {
        rbar,
        p_i,
        mode,
        ..Default::default()
    };
    let noise = if mode.is_active() { noise } else { noise.without_ris_noise() };
    let budget = mode.is_active().then_some(p_i);
    let (tx, total) = joint_brute_force(&ch, &noise, rbar, budget, 200).expect("instance is feasible");
    let (w, q, rec) = optimize(&ch, &noise, &cfg).unwrap();
    recheck(&w, &q, &ch, &noise, rbar, budget).unwrap();
    let got = rec.rows.last().unwrap();
    assert!((got.transmit_power - tx).abs() <= 1e-2 * tx, "seed {seed}: tx {} vs {tx}", got.transmit_power);
    assert!((got.total_power - total).abs() <= 1e-2 * total, "seed {seed}: total {} vs {total}", got.total_power);
}

#[test]
fn single_element_pipeline_matches_brute_force() {
    joint_case(1, RisMode::Active, 0.5);
    joint_case(2, RisMode::PassiveOptimized, 0.0);
}

#[test]
fn batch_is_ordered_and_reproducible() {
    let params = ChannelParams {
        num_ris_elements: 4,
        num_tx_antennas: 2,
        seed: 40,
        ..Default::default()
    };
    let noise = NoiseConfig::from_dbm(-90.0, -90.0, -90.0);
    let cfg = AltMinConfig {
        rbar: 1.0,
        ..Default::default()
    };
    let a = run_batch(&NodeLayout::reference(), &params, &noise, &cfg, 3).unwrap();
    let b = run_batch(&NodeLayout::reference(), &params, &noise, &cfg, 3).unwrap();
    assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![40, 41, 42]);
    assert_eq!(a, b);
    assert_eq!(a.num_ok, 3);
}

#[test]
fn passive_identity_is_a_single_step() {
    let mut r = rng(8);
    let (ch, noise) = unit_instance(&mut r, 3, 4);
    let cfg = AltMinConfig {
        rbar: 1.0,
        mode: RisMode::PassiveIdentity,
        ..Default::default()
    };
    let (_, q, rec) = optimize(&ch, &noise, &cfg).unwrap();
    assert_eq!(rec.rows.len(), 1);
    assert!(q.is_passive(1e-15));
    let opt = AltMinConfig {
        mode: RisMode::PassiveOptimized,
        ..cfg
    };
    let (_, _, rec2) = optimize(&ch, &noise, &opt).unwrap();
    assert!(rec2.rows.last().unwrap().transmit_power <= rec.rows[0].transmit_power);
}
