mod common;

use mcm_part::util::rng_from_seed;
use mcm_part::{
    analytical_eval, generate_synthetic, solve_sample, surrogate_eval, AnalyticalModel, ChipTopology,
    DistributionMatrix, GeneratorConfig, GraphFamily, NodeOrder, SurrogateConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn valid_partition(g: &mcm_part::ComputationGraph, c: usize, seed: u64) -> Vec<u32> {
    let mut rng = rng_from_seed(seed);
    let n = g.num_nodes();
    let order = NodeOrder::random(n, &mut rng);
    let mut p = DistributionMatrix::uniform(n, c);
    for i in 0..n {
        p.randomize_row(i, &mut rng);
    }
    solve_sample(g, &ChipTopology::with_chips(c).unwrap(), &order, &p, &mut rng).unwrap().assignment
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn runtime_times_throughput_is_one(n in 1usize..25, c in 1usize..6, seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let g = common::mixed_graph(n, seed, &mut rng);
        let p = valid_partition(&g, c, seed);
        let r = analytical_eval(&g, &ChipTopology::with_chips(c).unwrap(), &p, AnalyticalModel::default());
        prop_assert!(r.valid);
        let runtime = r.runtime().unwrap();
        prop_assert!((runtime * r.throughput - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adding_a_node_never_lowers_its_chip(n in 2usize..20, c in 1usize..5, seed in 0u64..1000) {
        // Remove the last node in topological order (a sink) and compare.
        let mut rng = rng_from_seed(seed);
        let g = common::mixed_graph(n, seed, &mut rng);
        let p = valid_partition(&g, c, seed);
        let topo = ChipTopology::with_chips(c).unwrap();
        let full = analytical_eval(&g, &topo, &p, AnalyticalModel::default());
        let sink = g.topological_order().last().unwrap().index();
        let keep: Vec<usize> = (0..n).filter(|&i| i != sink).collect();
        let mut remap = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = keep.iter().map(|&i| {
            let mut node = g.nodes()[i].clone();
            node.id = mcm_part::NodeId(remap[i] as u32);
            node
        }).collect();
        let edges = g.edges().iter().filter(|e| e.dst.index() != sink).map(|e| mcm_part::DataEdge {
            src: mcm_part::NodeId(remap[e.src.index()] as u32),
            dst: mcm_part::NodeId(remap[e.dst.index()] as u32),
            transfer_bytes: e.transfer_bytes,
        }).collect();
        let smaller = mcm_part::ComputationGraph::new(nodes, edges).unwrap();
        let sp: Vec<u32> = keep.iter().map(|&i| p[i]).collect();
        // Validity of the smaller partition is irrelevant: compare raw sums.
        let without = analytical_eval(&smaller, &topo, &sp, AnalyticalModel::default());
        if without.valid {
            let d = p[sink] as usize;
            prop_assert!(full.per_chip_latency[d] >= without.per_chip_latency[d]);
            prop_assert!(full.per_chip_memory[d] >= without.per_chip_memory[d]);
        }
    }

    #[test]
    fn relabeling_keeps_throughput(n in 1usize..25, c in 1usize..6, seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let g = common::mixed_graph(n, seed, &mut rng);
        let p = valid_partition(&g, c, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let h = g.relabel(&perm).unwrap();
        let mut q = vec![0u32; n];
        for i in 0..n {
            q[perm[i]] = p[i];
        }
        let topo = ChipTopology::with_chips(c).unwrap();
        let a = analytical_eval(&g, &topo, &p, AnalyticalModel::default());
        let b = analytical_eval(&h, &topo, &q, AnalyticalModel::default());
        prop_assert!((a.throughput - b.throughput).abs() <= 1e-12 * a.throughput.abs());
    }

    #[test]
    fn surrogate_is_pure(n in 1usize..25, c in 1usize..6, seed in 0u64..1000, noise in 0.0f64..0.5) {
        let mut rng = rng_from_seed(seed);
        let g = common::mixed_graph(n, seed, &mut rng);
        let p = valid_partition(&g, c, seed);
        let cfg = SurrogateConfig { noise_scale: noise, extra_failure_rate: 0.2, memory_headroom: 0.9, seed, include_comm: true };
        let topo = ChipTopology::with_chips(c).unwrap();
        prop_assert_eq!(surrogate_eval(&g, &topo, &p, &cfg), surrogate_eval(&g, &topo, &p, &cfg));
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn surrogate_tracks_analytical_runtime() {
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 40, 21)).unwrap();
    let c = 6;
    let topo = ChipTopology::with_chips(c).unwrap();
    let cfg = SurrogateConfig {
        noise_scale: 0.1,
        extra_failure_rate: 0.0,
        memory_headroom: 1.0,
        seed: 4,
        include_comm: true,
    };
    let mut rng = rng_from_seed(77);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    while xs.len() < 2000 {
        let p = valid_partition(&g, c, rng.random());
        let a = analytical_eval(&g, &topo, &p, AnalyticalModel::default());
        let s = surrogate_eval(&g, &topo, &p, &cfg);
        assert!(a.valid && s.valid);
        xs.push(a.runtime().unwrap());
        ys.push(s.runtime().unwrap());
    }
    let r = pearson(&xs, &ys);
    assert!(r >= 0.9, "pearson {r}");
}
