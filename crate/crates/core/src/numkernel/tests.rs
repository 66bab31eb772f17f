use super::gradcheck;
use super::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn masked_softmax_uniform_over_support() {
    let p = masked_softmax(&[0.0, 0.0, 0.0], &[false, true, true]).unwrap();
    assert_eq!(p, vec![0.0, 0.5, 0.5]);
}

#[test]
fn masked_softmax_analytic() {
    let p = masked_softmax(&[2f64.ln(), 0.0, 0.0], &[true, true, true]).unwrap();
    assert!(close(&p, &[0.5, 0.25, 0.25], 1e-12));
}

#[test]
fn masked_softmax_ignores_huge_masked_logit() {
    let p = masked_softmax(&[5.0, 1e9, 3.0], &[true, false, true]).unwrap();
    let z = 5f64.exp() + 3f64.exp();
    assert!(close(&p, &[5f64.exp() / z, 0.0, 3f64.exp() / z], 1e-12));
    assert!((p[0] - 0.8808).abs() < 1e-4 && (p[2] - 0.1192).abs() < 1e-4);
    assert_eq!(p[1], 0.0);
}

#[test]
fn masked_softmax_empty_mask() {
    assert!(matches!(masked_softmax(&[1.0, 2.0], &[false, false]), Err(KernelError::EmptyMask)));
}

#[test]
fn layer_norm_examples() {
    let ones = [1.0; 3];
    let zeros = [0.0; 3];
    assert_eq!(layer_norm(&[4.0, 4.0, 4.0], &ones, &zeros), vec![0.0; 3]);
    let y = layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2]);
    assert!(close(&y, &[1.0, -1.0], 1e-4));
    let y = layer_norm(&[1.0, 2.0, 3.0], &ones, &zeros);
    assert!(close(&y, &[-1.2247, 0.0, 1.2247], 1e-3));
}

#[test]
fn backward_linear_map_is_outer_product() {
    let mut ps = ParamStore::new();
    let w = ps.add("w", Array::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()).unwrap();
    let mut g = Graph::new(&ps);
    let x = g.input(vec![1.0, -2.0, 3.0]);
    let y = g.affine(w, None, x);
    let loss = g.sum_elems(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(w), &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
}

#[test]
fn detached_edge_has_exactly_zero_gradient() {
    let mut ps = ParamStore::new();
    let a = ps.add("a", Array::vector(vec![0.3, -0.7]).unwrap()).unwrap();
    let b = ps.add("b", Array::vector(vec![1.5, 0.2]).unwrap()).unwrap();
    let mut g = Graph::new(&ps);
    let av = g.param(a);
    let bv = g.param(b);
    let ad = g.detach(av);
    let s = g.sigmoid(ad);
    let prod = g.mul(s, bv);
    let loss = g.sum_elems(prod);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(a).iter().all(|&v| v == 0.0));
    assert!(grads.get(b).iter().all(|&v| v != 0.0));
}

#[test]
fn backward_rejects_vector_loss() {
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let x = g.input(vec![1.0, 2.0]);
    assert!(matches!(g.backward(x), Err(KernelError::Contract(_))));
}

#[test]
fn structural_zeros_get_no_gradient() {
    let mut ps = ParamStore::new();
    let w = ps
        .add_structured("w", Array::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), vec![false, false, true, false])
        .unwrap();
    assert_eq!(ps.get(w).data()[2], 0.0);
    let mut g = Graph::new(&ps);
    let x = g.input(vec![1.0, 1.0]);
    let y = g.affine(w, None, x);
    let loss = g.sum_elems(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(w)[2], 0.0);
    assert_eq!(grads.get(w)[3], 1.0);
}

#[test]
fn sample_degenerate_and_zero_mass() {
    let mut rng = RngStream::new(3);
    for _ in 0..100 {
        assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng).unwrap(), 1);
    }
    let mut hits = [0usize; 3];
    for _ in 0..10_000 {
        hits[sample_categorical(&[0.5, 0.5, 0.0], &mut rng).unwrap()] += 1;
    }
    assert_eq!(hits[2], 0);
}

#[test]
fn sample_frequencies_match() {
    let mut rng = RngStream::derive(11, StreamKind::Sample, &[0]);
    let n = 100_000;
    let ones = (0..n).filter(|_| sample_categorical(&[0.25, 0.75], &mut rng).unwrap() == 1).count();
    assert!((ones as f64 / n as f64 - 0.75).abs() < 0.01);
}

#[test]
fn sample_rejects_invalid() {
    let mut rng = RngStream::new(0);
    assert!(sample_categorical(&[0.5, 0.6], &mut rng).is_err());
    assert!(sample_categorical(&[-0.5, 1.5], &mut rng).is_err());
}

#[test]
fn derived_streams_are_reproducible_and_distinct() {
    let a: Vec<f64> = {
        let mut r = RngStream::derive(5, StreamKind::Decisions, &[1, 2]);
        (0..4).map(|_| r.uniform()).collect()
    };
    let b: Vec<f64> = {
        let mut r = RngStream::derive(5, StreamKind::Decisions, &[1, 2]);
        (0..4).map(|_| r.uniform()).collect()
    };
    let c: Vec<f64> = {
        let mut r = RngStream::derive(5, StreamKind::Dropout, &[1, 2]);
        (0..4).map(|_| r.uniform()).collect()
    };
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn nonfinite_output_is_a_fault() {
    let mut ps = ParamStore::new();
    let w = ps.add("w", Array::new(vec![1, 1], vec![1e300]).unwrap()).unwrap();
    let mut g = Graph::new(&ps);
    let x = g.input(vec![1e300]);
    let y = g.affine(w, None, x);
    let loss = g.sum_elems(y);
    assert!(g.fault().is_some());
    assert!(matches!(g.backward(loss), Err(KernelError::NonFinite(_))));
}

/// Builds a small random problem that routes through one primitive and
/// compares against central differences.
fn primitive_case(seed: u64, which: usize) -> f64 {
    let mut rng = RngStream::derive(seed, StreamKind::Init, &[which as u64]);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal()).collect() };
    let mut ps = ParamStore::new();
    let a = ps.add("a", Array::vector(rand_vec(5)).unwrap()).unwrap();
    let b = ps.add("b", Array::vector(rand_vec(5)).unwrap()).unwrap();
    let w = ps.add("w", Array::new(vec![5, 5], rand_vec(25)).unwrap()).unwrap();
    let bias = ps.add("bias", Array::vector(rand_vec(5)).unwrap()).unwrap();
    let table = ps.add("table", Array::new(vec![3, 5], rand_vec(15)).unwrap()).unwrap();
    let readout = ps.add("readout", Array::vector(rand_vec(5)).unwrap()).unwrap();
    let mask = [true, false, true, true, true];
    let target = 3;

    let build = |ps: &ParamStore| -> (f64, Option<Gradients>) {
        let mut g = Graph::new(ps);
        let av = g.param(a);
        let bv = g.param(b);
        let out = match which {
            0 => g.add(av, bv),
            1 => g.mul(av, bv),
            2 => g.relu(av),
            3 => g.sigmoid(av),
            4 => g.affine(w, Some(bias), av),
            5 => {
                let c = g.concat(&[av, bv]);
                g.slice(c, 3, 5)
            }
            6 => {
                let row = g.gather(table, 1);
                g.mul(row, av)
            }
            7 => g.layer_norm(av, bv, bv, &[5]),
            8 => g.layer_norm(av, bv, bv, &[2, 3]),
            9 => g.masked_softmax(av, &mask).unwrap(),
            10 => {
                let nll = g.masked_cross_entropy(av, &mask, target).unwrap();
                let s = g.scale(bv, 0.5);
                let t = g.sum_elems(s);
                let both = g.mul(nll, t);
                return finish_scalar(g, both);
            }
            11 => {
                let s0 = g.slice(av, 0, 1);
                let s1 = g.slice(bv, 2, 1);
                g.scatter(5, &[(1, s0), (4, s1)])
            }
            12 => g.dropout(av, &[true, false, true, true, false], 0.6),
            _ => unreachable!(),
        };
        // Random readout keeps every output coordinate relevant.
        let r = g.param(readout);
        let weighted = g.mul(out, r);
        let loss = g.sum_elems(weighted);
        finish_scalar(g, loss)
    };
    let (_, grads) = build(&ps);
    let grads = grads.unwrap();
    let report = gradcheck::check(&mut ps, &grads, 1e-5, |p| build(p).0);
    report.max_rel_error
}

fn finish_scalar(g: Graph<'_>, loss: Var) -> (f64, Option<Gradients>) {
    (g.scalar(loss), Some(g.backward(loss).unwrap()))
}

#[test]
fn every_primitive_matches_finite_differences() {
    for which in 0..13 {
        let mut worst: f64 = 0.0;
        for seed in 0..100 {
            worst = worst.max(primitive_case(seed, which));
        }
        assert!(worst < 1e-4, "primitive case {which}: max relative error {worst:e}");
    }
}

#[test]
fn forward_backward_is_bit_identical() {
    let run = || {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(9);
        let w = ps.add("w", Array::new(vec![4, 4], (0..16).map(|_| rng.normal()).collect()).unwrap()).unwrap();
        let mut g = Graph::new(&ps);
        let x = g.input((0..4).map(|i| i as f64 * 0.3).collect());
        let h = g.affine(w, None, x);
        let h = g.sigmoid(h);
        let l = g.cross_entropy(h, 2).unwrap();
        (g.scalar(l).to_bits(), g.backward(l).unwrap())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}
