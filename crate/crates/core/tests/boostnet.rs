mod common;

use boostnet_autodiff::gradcheck::{analytic_grad, central_difference};
use boostnet_autodiff::{finite_diff_check, Graph, Tensor};
use boostnet_core::boostnet::{boostnet_loss, decode_masks, flip_rows, BoostNet};
use boostnet_core::Error;
use common::*;

fn net(seed: u64) -> BoostNet<f64> {
    BoostNet::new(&tiny_config(), seed).unwrap()
}

fn values(net: &BoostNet<f64>, x: &Tensor<f64>) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let p = net.params.bind_frozen(&mut g);
    let xv = g.input(x.clone());
    let out = net.forward(&mut g, &p, xv, (16, 16)).unwrap();
    let get = |vs: &[_]| vs.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>();
    (get(&out.dop), get(&out.bop))
}

#[test]
fn six_maps_share_the_output_shape_and_bop0_is_dop0() {
    let n = net(0);
    let mut g = Graph::new();
    let p = n.params.bind_frozen(&mut g);
    let x = g.input(input(1, 2, 16));
    let out = n.forward(&mut g, &p, x, (16, 16)).unwrap();
    assert_eq!(out.bop[0], out.dop[0]);
    for &v in out.dop.iter().chain(&out.bop) {
        assert_eq!(g.value(v).shape(), &[2, 3, 8, 8]);
    }
    assert_eq!(out.last(), out.bop[2]);
}

#[test]
fn valid_region_is_cropped_from_a_padded_input() {
    let n = net(0);
    let geom = n.output_geometry(12, 14).unwrap();
    assert_eq!((geom.height, geom.width, geom.valid_height, geom.valid_width), (8, 8, 6, 7));
    let x = Tensor::<f64>::zeros(&[1, 3, 12, 14]);
    assert_eq!(n.predict_probs(&x, true).unwrap().shape(), &[1, 3, 6, 7]);
    assert!(n.output_geometry(12, 13).is_err());
}

#[test]
fn zero_residual_fc_gives_a_zero_map() {
    let mut n = net(0);
    let res = n.dsus[1].residual;
    n.params.get_mut(res.weight).data_mut().fill(0.0);
    n.params.get_mut(res.bias).data_mut().fill(0.0);
    let (dop, _) = values(&n, &input(3, 1, 16));
    assert!(dop[1].data().iter().all(|&v| v == 0.0));
    assert!(dop[0].data().iter().any(|&v| v != 0.0));
}

#[test]
fn identity_aggregation_is_exact_addition() {
    let mut n = net(4);
    randomize(&mut n, 4, 0.4);
    set_au(&mut n, 1, 1.0, 1.0);
    set_au(&mut n, 2, 1.0, 1.0);
    let (dop, bop) = values(&n, &input(5, 2, 16));
    for m in 1..3 {
        let sum: Vec<f64> = bop[m - 1].data().iter().zip(dop[m].data()).map(|(a, b)| a + b).collect();
        assert_eq!(bop[m].data(), &sum[..], "BOP_{m}");
    }
}

#[test]
fn projection_aggregation_collapses_to_the_first_map() {
    let mut n = net(6);
    randomize(&mut n, 6, 0.4);
    set_au(&mut n, 1, 1.0, 0.0);
    set_au(&mut n, 2, 1.0, 0.0);
    let (_, bop) = values(&n, &input(7, 1, 16));
    assert_eq!(bop[2].data(), bop[0].data());
    assert_eq!(bop[1].data(), bop[0].data());
}

#[test]
fn weighted_aggregation_matches_the_affine_oracle() {
    let mut n = net(8);
    randomize(&mut n, 8, 0.4);
    set_au(&mut n, 1, 0.5, 0.25);
    let (dop, bop) = values(&n, &input(9, 1, 16));
    for ((&b, &p), &d) in bop[1].data().iter().zip(bop[0].data()).zip(dop[1].data()) {
        assert_eq!(b, 0.5 * p + 0.25 * d);
    }
}

#[test]
fn default_aggregation_starts_additive() {
    let n = net(10);
    let (dop, bop) = values(&n, &input(11, 1, 16));
    let sum: Vec<f64> = bop[0].data().iter().zip(dop[1].data()).map(|(a, b)| a + b).collect();
    assert_eq!(bop[1].data(), &sum[..]);
}

/// Central differences of `Σ r ⊙ map` with respect to a named parameter.
fn map_sensitivity(n: &BoostNet<f64>, name: &str, pick: impl Fn(&boostnet_core::boostnet::StageOutputs) -> boostnet_autodiff::Var) -> f64 {
    let id = n.params.id(name).unwrap_or_else(|| panic!("{name}"));
    let x = input(12, 1, 16);
    let r = input(13, 1, 8);
    let f = |g: &mut Graph<f64>, w| {
        let out = forward_with(n, g, &x, id, w)?;
        let rv = g.input(r.clone());
        let prod = g.mul(pick(&out), rv)?;
        Ok::<_, Error>(g.sum(prod)?)
    };
    let numeric = central_difference(&f, n.params.get(id), 1e-5).unwrap();
    let analytic = analytic_grad(&f, n.params.get(id)).unwrap();
    numeric.data().iter().chain(analytic.data()).fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn later_stages_do_not_reach_earlier_maps() {
    let mut n = net(14);
    randomize(&mut n, 14, 0.4);
    let names: Vec<String> = n.params.entries().iter().map(|e| e.name.clone()).collect();
    let later = |prefixes: &[&str]| names.iter().filter(|s| prefixes.iter().any(|p| s.starts_with(p))).cloned().collect::<Vec<_>>();
    for name in later(&["dsu1.", "dsu2.", "au1.", "au2."]) {
        let g = map_sensitivity(&n, &name, |o| o.dop[0]);
        assert!(g < 1e-10, "DOP_0 depends on {name}: {g}");
    }
    for name in later(&["dsu2.", "au2."]) {
        let g = map_sensitivity(&n, &name, |o| o.bop[1]);
        assert!(g < 1e-10, "BOP_1 depends on {name}: {g}");
    }
    for name in ["dsu2.res.weight", "au2.weight", "dsu2.dc0.weight"] {
        assert!(map_sensitivity(&n, name, |o| o.bop[2]) > 1e-6, "BOP_2 ignores {name}");
    }
}

#[test]
fn uniform_logits_cost_three_ln3() {
    let mut n = net(15);
    for d in &n.dsus {
        n.params.get_mut(d.residual.weight).data_mut().fill(0.0);
        n.params.get_mut(d.residual.bias).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let p = n.params.bind_frozen(&mut g);
    let x = g.input(input(16, 2, 16));
    let out = n.forward(&mut g, &p, x, (16, 16)).unwrap();
    let loss = boostnet_loss(&mut g, &out, &labels(17, 2, 8), &[1.0, 1.0, 1.0]).unwrap();
    let v = g.value(loss.total).item().unwrap();
    assert!((v - 3.0 * 3f64.ln()).abs() < 1e-12, "{v}");
    assert!((v - 3.295837).abs() < 1e-6);
}

fn loss_grads(n: &BoostNet<f64>, weights: [f64; 3]) -> Vec<(String, f64)> {
    let mut g = Graph::new();
    let p = n.params.bind(&mut g);
    let x = g.input(input(18, 1, 16));
    let out = n.forward(&mut g, &p, x, (16, 16)).unwrap();
    let loss = boostnet_loss(&mut g, &out, &labels(19, 1, 8), &weights).unwrap();
    g.backward(loss.total).unwrap();
    let grads = p.grads(&g, &n.params).unwrap();
    n.params
        .entries()
        .iter()
        .zip(grads)
        .map(|(e, gr)| (e.name.clone(), gr.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        .collect()
}

#[test]
fn first_head_only_weights_train_only_the_first_unit() {
    let mut n = net(20);
    randomize(&mut n, 20, 0.4);
    let grads = loss_grads(&n, [1.0, 0.0, 0.0]);
    for (name, g) in &grads {
        if ["dsu1.", "dsu2.", "au1.", "au2."].iter().any(|p| name.starts_with(p)) {
            assert_eq!(*g, 0.0, "{name}");
        }
    }
    let of = |name: &str| grads.iter().find(|(n, _)| n == name).unwrap().1;
    assert!(of("dsu0.res.weight") > 1e-6 && of("dsu0.fuse.weight") > 1e-6);
}

#[test]
fn first_aggregation_is_trained_through_the_final_head() {
    let mut n = net(21);
    randomize(&mut n, 21, 0.4);
    let grads = loss_grads(&n, [0.0, 0.0, 1.0]);
    let of = |name: &str| grads.iter().find(|(n, _)| n == name).unwrap().1;
    assert!(of("au1.weight") > 1e-6 && of("au2.weight") > 1e-6);
    let id = n.params.id("au1.weight").unwrap();
    let x = input(18, 1, 16);
    let y = labels(19, 1, 8);
    let err = finite_diff_check(|g: &mut Graph<f64>, w| loss_with(&n, g, &x, &y, id, w), n.params.get(id), 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn end_to_end_gradient_matches_central_differences() {
    let mut n = net(22);
    randomize(&mut n, 22, 0.5);
    let x = input(23, 1, 16);
    let y = labels(24, 1, 8);
    let mut worst = (0.0, String::new());
    for e in n.params.entries() {
        let id = n.params.id(&e.name).unwrap();
        let err = finite_diff_check(|g: &mut Graph<f64>, w| loss_with(&n, g, &x, &y, id, w), &e.value, 1e-5).unwrap();
        if err > worst.0 {
            worst = (err, e.name.clone());
        }
    }
    assert!(worst.0 < 1e-4, "{worst:?}");
}

#[test]
fn flip_averaging_is_flip_equivariant_and_symmetric_on_symmetric_input() {
    let mut n = net(25);
    randomize(&mut n, 25, 0.4);
    let x = input(26, 1, 16);
    let a = n.predict_probs(&x, true).unwrap();
    let b = flip_rows(&n.predict_probs(&flip_rows(&x).unwrap(), true).unwrap()).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
    let mut sym = x.clone();
    let flipped = flip_rows(&x).unwrap();
    for (s, f) in sym.data_mut().iter_mut().zip(flipped.data()) {
        *s = 0.5 * (*s + f);
    }
    let p = n.predict_probs(&sym, true).unwrap();
    assert_eq!(p.data(), flip_rows(&p).unwrap().data());
    let single = n.predict_probs(&sym, false).unwrap();
    assert!(p.data().iter().zip(single.data()).any(|(a, b)| a != b), "single pass is not symmetric here");
}

#[test]
fn flip_averaging_is_a_no_op_for_a_flip_invariant_model() {
    let mut n = net(27);
    for d in &n.dsus {
        n.params.get_mut(d.residual.weight).data_mut().fill(0.0);
        let b = n.params.get_mut(d.residual.bias).data_mut();
        b.copy_from_slice(&[0.3, -0.2, 0.1]);
    }
    let x = input(28, 1, 16);
    assert_eq!(n.predict_probs(&x, true).unwrap(), n.predict_probs(&x, false).unwrap());
}

#[test]
fn decoding_picks_the_argmax_and_breaks_ties_low() {
    let mut probs = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
    probs.data_mut().copy_from_slice(&[0.2, 0.5, 1.0 / 3.0, 0.1, 0.7, 0.5, 1.0 / 3.0, 0.1, 0.1, 0.0, 1.0 / 3.0, 0.8]);
    let m = &decode_masks(&probs, 2, 2).unwrap()[0];
    assert_eq!(m.data, vec![1, 0, 0, 2]);
    let uniform = Tensor::<f64>::full(&[1, 3, 4, 4], 1.0 / 3.0);
    assert!(decode_masks(&uniform, 8, 8).unwrap()[0].data.iter().all(|&c| c == 0));
}
