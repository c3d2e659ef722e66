use mobnet::mapeq::{
    brute_force_optimum, codelength, normalized_mutual_information, optimize, walker_rates, Network, Partition,
    TeleportMode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random strongly connected digraph: a random Hamiltonian cycle plus
/// extra arcs with log-uniform weights.
fn random_strong_graph(seed: u64, max_nodes: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut arcs = Vec::new();
    for i in 0..n {
        arcs.push((order[i], order[(i + 1) % n], 10f64.powf(rng.gen_range(-1.0..1.0))));
    }
    let p = rng.gen_range(0.1..0.6);
    for a in 0..n {
        for b in 0..n {
            if rng.gen_bool(p) {
                arcs.push((a, b, 10f64.powf(rng.gen_range(-1.5..1.0))));
            }
        }
    }
    Network::new(n, arcs).unwrap()
}

fn two_cliques(bridge: f64) -> Network {
    let mut arcs = Vec::new();
    for block in [0usize, 4] {
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    arcs.push((block + a, block + b, 1.0));
                }
            }
        }
    }
    arcs.push((3, 4, bridge));
    arcs.push((4, 3, bridge));
    Network::new(8, arcs).unwrap()
}

#[test]
fn optimizer_matches_brute_force_on_small_graphs() {
    let mut hits = 0;
    for seed in 0..100 {
        let net = random_strong_graph(1000 + seed, 8);
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
        let (_, opt) = optimize(&net, &rates, seed, 20).unwrap();
        let (_, bf) = brute_force_optimum(&net, &rates).unwrap();
        assert!(opt.total_bits >= bf.total_bits - 1e-9);
        if (opt.total_bits - bf.total_bits).abs() < 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "matched {hits}/100");
}

#[test]
fn two_cliques_split_at_the_weak_bridge() {
    let net = two_cliques(0.01);
    let rates = walker_rates(&net, 0.15, TeleportMode::InStrength).unwrap();
    let (p, c) = optimize(&net, &rates, 7, 10).unwrap();
    assert_eq!(p.assignment(), &[0, 0, 0, 0, 1, 1, 1, 1]);
    let (bp, bc) = brute_force_optimum(&net, &rates).unwrap();
    assert_eq!(bp, p);
    assert!((bc.total_bits - c.total_bits).abs() < 1e-12);
}

#[test]
fn complete_graph_is_one_module() {
    let n = 6;
    let arcs = (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b, 1.0))).collect();
    let net = Network::new(n, arcs).unwrap();
    let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
    let (p, c) = optimize(&net, &rates, 1, 5).unwrap();
    assert_eq!(p.module_count(), 1);
    assert!((c.total_bits - (n as f64).log2()).abs() < 1e-12);
    let (_, bf) = brute_force_optimum(&net, &rates).unwrap();
    assert!((bf.total_bits - c.total_bits).abs() < 1e-12);
}

#[test]
fn star_rates_match_monte_carlo_walk() {
    // k leaves point at a dangling hub; the walker restarts uniformly from the hub.
    let k = 5;
    let net = Network::new(k + 1, (1..=k).map(|i| (i, 0, 1.0)).collect()).unwrap();
    let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let steps = 1_000_000;
    let mut visits = vec![0u64; k + 1];
    let mut at = 1usize;
    for _ in 0..steps {
        at = if at == 0 { rng.gen_range(0..=k) } else { 0 };
        visits[at] += 1;
    }
    for (v, &count) in visits.iter().enumerate() {
        let freq = count as f64 / steps as f64;
        let sd = (rates.visit[v] * (1.0 - rates.visit[v]) / steps as f64).sqrt();
        assert!((freq - rates.visit[v]).abs() < 6.0 * sd + 1e-4, "node {v}: {freq} vs {}", rates.visit[v]);
    }
    let hub = (k as f64 + 1.0) / (2.0 * k as f64 + 1.0);
    assert!((rates.visit[0] - hub).abs() < 1e-10);
}

#[test]
fn undirected_input_runs_to_completion() {
    let mut arcs = Vec::new();
    for &(a, b) in &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)] {
        arcs.push((a, b, 1.0));
        arcs.push((b, a, 1.0));
    }
    let net = Network::new(6, arcs).unwrap();
    let rates = walker_rates(&net, 0.15, TeleportMode::InStrength).unwrap();
    let (p, _) = optimize(&net, &rates, 0, 4).unwrap();
    assert_eq!(p.len(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn visit_rates_form_a_distribution(seed in 0u64..10_000, tau in 0.0f64..1.0) {
        let net = random_strong_graph(seed, 10);
        let rates = walker_rates(&net, tau, TeleportMode::InStrength).unwrap();
        prop_assert!((rates.visit.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(rates.visit.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn optimum_beats_trivial_partitions(seed in 0u64..10_000, recorded in any::<bool>()) {
        let net = random_strong_graph(seed, 12);
        let rates = walker_rates(&net, 0.15, TeleportMode::InStrength).unwrap().with_recorded_teleport(recorded);
        let (p, c) = optimize(&net, &rates, seed, 3).unwrap();
        let one = codelength(&net, &Partition::single_module(net.len()), &rates).unwrap();
        let singles = codelength(&net, &Partition::singletons(net.len()), &rates).unwrap();
        prop_assert!(c.total_bits <= one.total_bits + 1e-12);
        prop_assert!(c.total_bits <= singles.total_bits + 1e-12);
        prop_assert!((c.total_bits - c.index_bits - c.module_bits).abs() < 1e-12);
        let again = codelength(&net, &p, &rates).unwrap();
        prop_assert_eq!(again, c);
    }

    #[test]
    fn scaling_weights_changes_nothing(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let net = random_strong_graph(seed, 12);
        let scaled = net.scaled(c);
        let r1 = walker_rates(&net, 0.15, TeleportMode::InStrength).unwrap();
        let r2 = walker_rates(&scaled, 0.15, TeleportMode::InStrength).unwrap();
        for (a, b) in r1.visit.iter().zip(&r2.visit) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let (p1, c1) = optimize(&net, &r1, 5, 3).unwrap();
        let (p2, c2) = optimize(&scaled, &r2, 5, 3).unwrap();
        prop_assert_eq!(p1, p2);
        prop_assert!((c1.total_bits - c2.total_bits).abs() < 1e-9);
    }

    #[test]
    fn optimize_is_deterministic(seed in 0u64..10_000) {
        let net = random_strong_graph(seed, 12);
        let rates = walker_rates(&net, 0.15, TeleportMode::InStrength).unwrap();
        prop_assert_eq!(optimize(&net, &rates, seed, 4).unwrap(), optimize(&net, &rates, seed, 4).unwrap());
    }

    #[test]
    fn nmi_is_symmetric_and_bounded(a in proptest::collection::vec(0usize..4, 1..40), shift in 0usize..4) {
        let b: Vec<usize> = a.iter().enumerate().map(|(i, &x)| (x + i * shift) % 5).collect();
        let ab = normalized_mutual_information(&a, &b).unwrap();
        let ba = normalized_mutual_information(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((normalized_mutual_information(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
