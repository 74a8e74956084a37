//! Property tests for the structural and metric invariants.

use proptest::prelude::*;

use treegan::data::{normalize_unit_sphere, sample_shape, PointCloud, ShapeKind};
use treegan::metrics::{chamfer, fpd, jsd_grid, GaussianStats};
use treegan::scalar::Scalar;
use treegan::semantics::{leaves_of_ancestor, shared_ancestor_depth};
use treegan::tensor::Tensor;

fn cloud_strategy(max_n: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(-1.0f64..1.0, n * 3)
            .prop_map(move |data| Tensor::new(vec![n, 3], data).unwrap())
    })
}

fn degrees_strategy() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(1usize..=4, 1..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_symmetric_and_zero_on_self(x in cloud_strategy(12), y in cloud_strategy(12)) {
        let xy = chamfer(&x, &y).unwrap();
        let yx = chamfer(&y, &x).unwrap();
        prop_assert_eq!(xy, yx);
        prop_assert!(xy >= 0.0);
        prop_assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn jsd_bounded_and_symmetric(a in cloud_strategy(24), b in cloud_strategy(24)) {
        let sa = vec![a];
        let sb = vec![b];
        let ab = jsd_grid(&sa, &sb, 12).unwrap();
        let ba = jsd_grid(&sb, &sa, 12).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= (2.0f64).ln() + 1e-12);
    }

    #[test]
    fn normalization_centers_and_bounds(cloud in cloud_strategy(32)) {
        let pc = PointCloud::new(cloud).unwrap();
        let (norm, record) = normalize_unit_sphere(&pc);
        let n = norm.len();
        let mut centroid = [0.0f64; 3];
        let mut max_norm = 0.0f64;
        for i in 0..n {
            let p = norm.point(i);
            for c in 0..3 { centroid[c] += p[c] / n as f64; }
            max_norm = max_norm.max((p[0]*p[0] + p[1]*p[1] + p[2]*p[2]).sqrt());
        }
        for c in centroid { prop_assert!(c.abs() < 1e-9); }
        prop_assert!(max_norm <= 1.0 + 1e-9);
        prop_assert!(record.scale > 0.0);
    }

    #[test]
    fn ancestor_blocks_partition_the_leaves(degrees in degrees_strategy(), layer_pick in 0usize..5) {
        let l = layer_pick % (degrees.len() + 1);
        let sizes: Vec<usize> = std::iter::once(1)
            .chain(degrees.iter().scan(1usize, |acc, &d| { *acc *= d; Some(*acc) }))
            .collect();
        let n = sizes[degrees.len()];
        let mut covered = vec![false; n];
        for a in 0..sizes[l] {
            let block = leaves_of_ancestor(&degrees, l, a).unwrap();
            for idx in block {
                prop_assert!(!covered[idx], "blocks overlap");
                covered[idx] = true;
            }
        }
        prop_assert!(covered.into_iter().all(|c| c), "blocks miss leaves");
    }

    #[test]
    fn final_block_siblings_share_all_proper_ancestors(degrees in degrees_strategy()) {
        let n: usize = degrees.iter().product();
        let d_last = *degrees.last().unwrap();
        prop_assume!(d_last >= 2);
        let depth = degrees.len();
        for block in 0..n / d_last {
            let a = block * d_last;
            let b = block * d_last + d_last - 1;
            if a == b { continue; }
            let d = shared_ancestor_depth(&degrees, a, b).unwrap();
            // Siblings agree everywhere below the leaf layer; with singleton
            // layers skipped the depth can only be the deepest informative
            // layer at or below L-1.
            prop_assert!(d <= depth - 1);
            let sizes: Vec<usize> = std::iter::once(1)
                .chain(degrees.iter().scan(1usize, |acc, &x| { *acc *= x; Some(*acc) }))
                .collect();
            let deepest_informative = (1..depth).rev().find(|&l| sizes[l] > 1);
            match deepest_informative {
                Some(l) => prop_assert_eq!(d, l),
                None => prop_assert_eq!(d, 0),
            }
        }
    }

    #[test]
    fn fpd_symmetric_nonnegative(seed_a in 0u64..1000, seed_b in 0u64..1000) {
        let feats = |seed: u64| {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            Tensor::new(vec![30, 4], (0..120).map(|_| f64::sample_normal(&mut rng)).collect()).unwrap()
        };
        let p = GaussianStats::fit(&feats(seed_a)).unwrap();
        let q = GaussianStats::fit(&feats(seed_b)).unwrap();
        let pq = fpd(&p, &q).unwrap();
        let qp = fpd(&q, &p).unwrap();
        prop_assert!((pq - qp).abs() < 1e-8);
        prop_assert!(pq >= 0.0);
    }

    #[test]
    fn pcb_roundtrip_is_bit_exact(seed in 0u64..500, count in 1usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.pcb");
        let clouds: Vec<PointCloud<f32>> = (0..count)
            .map(|i| sample_shape(ShapeKind::Sphere, 16, seed + i as u64, 0.05).unwrap())
            .collect();
        treegan::data::write_pcb(&path, &clouds).unwrap();
        let back: Vec<PointCloud<f32>> = treegan::data::read_pcb(&path).unwrap();
        prop_assert_eq!(back.len(), clouds.len());
        for (a, b) in back.iter().zip(&clouds) {
            prop_assert_eq!(a.points.data(), b.points.data());
        }
    }
}
