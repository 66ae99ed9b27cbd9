//! Seeded scenario variations: device-parameter perturbations and random
//! radial feeders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{CommunityScenario, Line, Topology};

/// Scales every device parameter by an independent factor drawn from
/// `[1 - fraction, 1 + fraction]`. Efficiencies, SOC fractions and profiles
/// are kept; initial storage energy stays at the same fraction of capacity
/// and the flexible-load energy target stays reachable.
pub fn perturb(base: &CommunityScenario, fraction: f64, seed: u64) -> CommunityScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = move || 1.0 + fraction * (2.0 * rng.gen::<f64>() - 1.0);
    let mut sc = base.clone();
    let dt = sc.dt();
    for p in &mut sc.prosumers {
        for fl in &mut p.flexible_loads {
            let s = f();
            fl.p_max.iter_mut().for_each(|v| *v *= s);
            fl.beta1 *= f();
            fl.beta2 *= f();
            let cap = 0.9 * fl.p_max.iter().sum::<f64>() * dt;
            fl.energy_ref = (fl.energy_ref * f()).min(cap);
            let per_step = fl.energy_ref / (fl.p_max.len() as f64 * dt);
            fl.ref_profile.iter_mut().for_each(|v| *v = per_step);
        }
        for s in &mut p.storages {
            let soc0 = s.w0 / s.w_nominal;
            s.p_charge_max *= f();
            s.p_discharge_max *= f();
            s.w_nominal *= f();
            s.w0 = soc0 * s.w_nominal;
            let w = f();
            s.w_day_min *= w;
            s.w_day_max *= w;
            s.lambda_ess *= f();
        }
        for d in &mut p.diesels {
            let s = f();
            d.p_max.iter_mut().for_each(|v| *v *= s);
            let r = f();
            d.ramp_min.iter_mut().for_each(|v| *v *= r);
            d.ramp_max.iter_mut().for_each(|v| *v *= r);
            d.lambda1 *= f();
            d.lambda2 *= f();
        }
    }
    sc
}

/// Random radial feeder over `num_prosumers` prosumers: a random tree of
/// `num_buses` buses, prosumers placed on random buses, one line per tree
/// edge carrying the prosumers below it.
pub fn random_radial_topology(num_prosumers: usize, num_buses: usize, limit: f64, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_buses = num_buses.max(1);
    let parent: Vec<usize> = (0..num_buses).map(|k| if k == 0 { 0 } else { rng.gen_range(0..k) }).collect();
    let bus_of: Vec<usize> = (0..num_prosumers).map(|_| rng.gen_range(0..num_buses)).collect();
    let below = |edge: usize, mut b: usize| loop {
        if b == edge {
            return true;
        }
        if b == 0 {
            return false;
        }
        b = parent[b];
    };
    let mut lines = Vec::new();
    let mut membership = Vec::new();
    for edge in 1..num_buses {
        let row: Vec<bool> = bus_of.iter().map(|&b| below(edge, b)).collect();
        if row.iter().any(|&m| m) && !membership.contains(&row) {
            lines.push(Line {
                c_min: -limit,
                c_max: limit,
            });
            membership.push(row);
        }
    }
    let depth = |mut b: usize| {
        let mut d = 0;
        while b != 0 {
            b = parent[b];
            d += 1;
        }
        d
    };
    let hops = |mut a: usize, mut b: usize| {
        let mut n = 0;
        while a != b {
            if depth(a) >= depth(b) {
                a = parent[a];
            } else {
                b = parent[b];
            }
            n += 1;
        }
        n as f64
    };
    let distance = (0..num_prosumers)
        .map(|i| {
            (0..num_prosumers)
                .map(|j| if i == j { 0.0 } else { hops(bus_of[i], bus_of[j]).max(1.0) })
                .collect()
        })
        .collect();
    Topology {
        lines,
        membership,
        distance,
    }
}
