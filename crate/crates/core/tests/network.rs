mod common;

use common::{check_architecture, random};
use witunet::net::{Checkpoint, NetConfig, WiTUnet};
use witunet::rng::SplitMix64;
use witunet::Tensor;

#[test]
fn nested_lattice_arithmetic() {
    for d in 1..=4 {
        let nodes = check_architecture(d, true).unwrap();
        assert_eq!(nodes, (d + 1) * (d + 2) / 2);
    }
    assert_eq!(check_architecture(4, true).unwrap(), 15);
}

#[test]
fn plain_lattice_arithmetic() {
    for d in 1..=4 {
        assert_eq!(check_architecture(d, false).unwrap(), 2 * d + 1);
    }
}

#[test]
fn zero_initialised_network_is_identity() {
    let net = WiTUnet::new(NetConfig::desk()).unwrap();
    let params = net.init_params::<f32>(9).unwrap();
    let mut rng = SplitMix64::new(10);
    for i in 0..20 {
        let (h, w) = if i % 2 == 0 { (16, 16) } else { (11 + i, 9 + i) };
        let y = random::<f32>(&[1, 1, h, w], 1.0, &mut rng).map(|v| v.abs());
        assert_eq!(net.denoise(&params, &y).unwrap(), y);
    }
}

#[test]
fn random_weights_change_output_and_are_deterministic() {
    let net = WiTUnet::new(NetConfig::desk()).unwrap();
    let mut params = net.init_params::<f32>(1).unwrap();
    let mut rng = SplitMix64::new(2);
    for (_, p) in params.iter_mut() {
        if p.value.data().iter().all(|&v| v == 0.0) {
            p.value = random(p.value.dims(), 0.1, &mut rng);
        }
    }
    let y = random::<f32>(&[2, 1, 16, 16], 1.0, &mut rng);
    let a = net.denoise(&params, &y).unwrap();
    assert_ne!(a, y);
    assert_eq!(a, net.denoise(&params, &y).unwrap());
}

#[test]
fn bad_inputs_are_rejected() {
    let net = WiTUnet::new(NetConfig::desk()).unwrap();
    let params = net.init_params::<f32>(1).unwrap();
    assert!(net.denoise(&params, &Tensor::zeros(&[1, 2, 8, 8])).is_err());
    let mut y = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
    y.data_mut()[3] = f32::NAN;
    assert!(net.denoise(&params, &y).is_err());
    let bad = NetConfig { head_dim: 3, ..NetConfig::desk() };
    assert!(WiTUnet::new(bad).is_err());
}

#[test]
fn ablation_variants_build() {
    for (lipe, nested) in [(true, true), (false, true), (true, false), (false, false)] {
        let cfg = NetConfig { use_lipe: lipe, use_nested: nested, ..NetConfig::desk() };
        let net = WiTUnet::new(cfg.clone()).unwrap();
        let ck = Checkpoint::initial(cfg, 4).unwrap();
        assert_eq!(ck.params.numel(), net.param_count());
    }
}

#[test]
fn lattice_is_acyclic_with_in_degree_law() {
    use witunet::net::{node_graph, NodeRole};
    for d in 1..=6 {
        let g = node_graph(&NetConfig { depth: d, ..NetConfig::default() });
        assert_eq!(g.nodes.len(), (d + 1) * (d + 2) / 2);
        assert!(g.is_topologically_ordered());
        for &n in &g.nodes {
            match n.role(d) {
                NodeRole::Encoder | NodeRole::Bottleneck => assert_eq!(g.in_degree(n), usize::from(n.k > 0)),
                _ => assert_eq!(g.in_degree(n), n.v + 1, "D={d} {n}"),
            }
        }
    }
}
