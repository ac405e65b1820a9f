//! Support utilities for the crate's own tests: seeded generation of random
//! connected networks. Hidden from documentation; not part of the stable API.

use rand::Rng;

use crate::netmodel::{Branch, Bus, BusKind, Network};

/// A random connected network with between 4 and `max_n` buses: a random
/// spanning tree plus a few extra branches, random line parameters, and bus 1
/// as the reference. Injections are left at zero — callers that need a
/// specific operating point perturb [`Network::base_point`] themselves.
pub fn random_network<R: Rng>(rng: &mut R, max_n: usize) -> Network {
    assert!(max_n >= 4);
    let n = rng.random_range(4..=max_n);
    let buses: Vec<Bus> = (1..=n as u32)
        .map(|id| Bus {
            id,
            kind: if id == 1 {
                BusKind::Slack
            } else if rng.random_bool(0.3) {
                BusKind::Pv
            } else {
                BusKind::Pq
            },
            voltage_mag: rng.random_range(0.95..1.05),
            voltage_ang: if id == 1 {
                0.0
            } else {
                rng.random_range(-0.3..0.3)
            },
            p_inject: 0.0,
            q_inject: 0.0,
        })
        .collect();
    let mut branches = Vec::new();
    for k in 2..=n {
        let parent = rng.random_range(1..k) as u32;
        branches.push(random_branch(rng, parent, k as u32));
    }
    for _ in 0..rng.random_range(0..=n / 2) {
        let a = rng.random_range(1..=n) as u32;
        let b = rng.random_range(1..=n) as u32;
        if a != b {
            branches.push(random_branch(rng, a, b));
        }
    }
    Network {
        buses,
        branches,
        reference: 1,
        base_mva: 100.0,
    }
}

fn random_branch<R: Rng>(rng: &mut R, from: u32, to: u32) -> Branch {
    Branch {
        from,
        to,
        resistance: rng.random_range(0.0..0.02),
        reactance: rng.random_range(0.01..0.2),
        line_charging: if rng.random_bool(0.5) {
            rng.random_range(0.0..0.3)
        } else {
            0.0
        },
        tap_ratio: if rng.random_bool(0.2) {
            rng.random_range(0.9..1.1)
        } else {
            0.0
        },
        phase_shift: if rng.random_bool(0.1) {
            rng.random_range(-0.1..0.1)
        } else {
            0.0
        },
        in_service: true,
    }
}
