use proptest::prelude::*;

use super::*;
use crate::numkernel::RngStream;

/// Random projective dependency heads over `1..=n` (1-based, 0 = root).
fn random_projective(n: usize, rng: &mut RngStream) -> Vec<usize> {
    fn fill(l: usize, r: usize, parent: usize, heads: &mut [usize], rng: &mut RngStream) {
        if l > r {
            return;
        }
        let h = l + rng.below(r - l + 1);
        heads[h - 1] = parent;
        for (a, b) in [(l, h.wrapping_sub(1)), (h + 1, r)] {
            if a > b || b == usize::MAX {
                continue;
            }
            let mut start = a;
            for cut in a..=b {
                if cut == b || rng.bernoulli(0.5) {
                    fill(start, cut, h, heads, rng);
                    start = cut + 1;
                }
            }
        }
    }
    let mut heads = vec![0; n];
    fill(1, n, 0, &mut heads, rng);
    heads
}

fn random_binary(l: usize, r: usize, rng: &mut RngStream) -> Tree {
    if l == r {
        return Tree::Leaf(l);
    }
    let k = l + rng.below(r - l);
    Tree::Node(vec![random_binary(l, k, rng), random_binary(k + 1, r, rng)])
}

fn dep_tree(heads: Vec<usize>) -> DependencyTree {
    let n = heads.len();
    DependencyTree::new((0..n).map(|i| format!("w{i}")).collect(), heads, vec!["dep".into(); n]).unwrap()
}

proptest! {
    #[test]
    fn conversion_tiles_sentence(seed in 0u64..10_000, n in 1usize..16) {
        let mut rng = RngStream::new(seed);
        let d = dep_tree(random_projective(n, &mut rng));
        prop_assert!(d.projective);
        let t = dep_to_constituency(&d).unwrap();
        prop_assert!(t.validate().is_ok());
        prop_assert_eq!(t.leaves(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn binarize_preserves_leaves_and_is_idempotent(seed in 0u64..10_000, n in 1usize..16) {
        let mut rng = RngStream::new(seed);
        let t = dep_to_constituency(&dep_tree(random_projective(n, &mut rng))).unwrap();
        let b = binarize_left(&t);
        prop_assert!(b.is_binary());
        prop_assert_eq!(b.leaves(), t.leaves());
        prop_assert!(b.depth() >= t.depth());
        prop_assert_eq!(binarize_left(b.as_tree()), b.clone());
    }
}

#[test]
fn converted_dependency_trees_are_shallower_than_random_binary() {
    let mut rng = RngStream::new(2024);
    let (mut dep_depth, mut bin_depth) = (0usize, 0usize);
    for _ in 0..500 {
        let n = 2 + rng.below(25);
        let d = dep_tree(random_projective(n, &mut rng));
        dep_depth += dep_to_constituency(&d).unwrap().depth();
        bin_depth += random_binary(0, n - 1, &mut rng).depth();
    }
    assert!(dep_depth <= bin_depth, "dependency {dep_depth} vs binary {bin_depth}");
}
