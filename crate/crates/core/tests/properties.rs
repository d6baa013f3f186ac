use clustmatch::clustering::{adjusted_rand_index, cmds_embed, kmeans, DistanceMatrix, Labeling};
use clustmatch::models::{bitflip, sample_er, sample_sbm, NoiseSpec, SbmSpec};
use clustmatch::theory::pattern_counts;
use clustmatch::{
    brute_force_lap, clustered_match, coarse_match, permute_graph, sgm_match, solve_lap, trace_objective, CostMatrix,
    Graph, Permutation, RngSeed, SeedSet, Sense, SgmOptions,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weighted(n: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut m = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..3.0));
    m = (&m + m.transpose()) * 0.5;
    m.fill_diagonal(0.0);
    Graph::weighted(m).unwrap()
}

fn sym_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    weighted(n, rng).into_matrix()
}

fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn perm(n: usize, rng: &mut ChaCha8Rng) -> Permutation {
    Permutation::random(n, rng)
}

fn is_valid_graph(g: &Graph) -> bool {
    let w = g.weights();
    (0..g.n()).all(|i| w[(i, i)] == 0.0 && (0..g.n()).all(|j| w[(i, j)] == w[(j, i)]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distance_trace_identity(seed: u64, n in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = weighted(n, &mut rng);
        let b = weighted(n, &mut rng);
        let p = perm(n, &mut rng);
        let moved = permute_graph(&a, &p).unwrap();
        let lhs = frob_sq(&(b.weights() - moved.weights()));
        let rhs = frob_sq(a.weights()) + frob_sq(b.weights()) - 2.0 * trace_objective(&a, b.weights(), &p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn permutation_composes_contravariantly(seed: u64, n in 1usize..=15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample_er(n, 0.4, RngSeed::new(seed)).unwrap();
        let (p, q) = (perm(n, &mut rng), perm(n, &mut rng));
        let twice = permute_graph(&permute_graph(&g, &p).unwrap(), &q).unwrap();
        prop_assert_eq!(twice, permute_graph(&g, &q.compose(&p)).unwrap());
        prop_assert_eq!(permute_graph(&g, &Permutation::identity(n)).unwrap(), g);
    }

    #[test]
    fn constructors_reject_bad_matrices(seed: u64, n in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = sym_matrix(n, &mut rng);
        m[(0, 1)] += 1.0;
        prop_assert!(Graph::weighted(m.clone()).is_err());
        let mut h = sym_matrix(n, &mut rng);
        h[(1, 1)] = 1.0;
        prop_assert!(Graph::weighted(h).is_err());
    }

    #[test]
    fn samplers_are_valid_and_reproducible(seed: u64, n in 1usize..=30, p in 0.0f64..=1.0) {
        let a = sample_er(n, p, RngSeed::new(seed)).unwrap();
        prop_assert!(is_valid_graph(&a));
        prop_assert_eq!(&a, &sample_er(n, p, RngSeed::new(seed)).unwrap());
        let spec = SbmSpec::new(vec![n, 3], vec![vec![p, 0.2], vec![0.2, 0.7]]).unwrap();
        let s = sample_sbm(&spec, RngSeed::new(seed)).unwrap();
        prop_assert!(is_valid_graph(&s));
        let f = bitflip(&a, &NoiseSpec::uniform(0.3).unwrap(), RngSeed::new(seed ^ 1)).unwrap();
        prop_assert!(is_valid_graph(&f));
    }

    #[test]
    fn lap_matches_enumeration(seed: u64, n in 1usize..=7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = CostMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.random_range(-10.0..10.0))).unwrap();
        for sense in [Sense::Min, Sense::Max] {
            let fast = solve_lap(&c, sense);
            let slow = brute_force_lap(&c, sense).unwrap();
            prop_assert!((fast.total - slow.total).abs() <= 1e-9);
        }
    }

    #[test]
    fn lap_duals_certify_optimum(seed: u64, n in 1usize..=25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..100.0));
        let a = solve_lap(&CostMatrix::new(vals.clone()).unwrap(), Sense::Min);
        for i in 0..n {
            for j in 0..n {
                prop_assert!(a.row_duals[i] + a.col_duals[j] <= vals[(i, j)] + 1e-7);
            }
            let j = a.perm.apply(i);
            prop_assert!((a.row_duals[i] + a.col_duals[j] - vals[(i, j)]).abs() <= 1e-7);
        }
    }

    #[test]
    fn lap_argmin_survives_affine_maps(seed: u64, n in 1usize..=20, scale in 0.1f64..10.0, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        let base = solve_lap(&CostMatrix::new(vals.clone()).unwrap(), Sense::Min);
        let moved = solve_lap(&CostMatrix::new(vals.map(|v| scale * v + shift)).unwrap(), Sense::Min);
        prop_assert_eq!(base.perm, moved.perm);
    }

    #[test]
    fn sgm_keeps_seeds_and_objective_identity(seed: u64, n in 3usize..=25, s in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = sample_er(n, 0.4, RngSeed::new(seed)).unwrap();
        let reference = sym_matrix(n, &mut rng);
        let truth = perm(n, &mut rng);
        let seeds = SeedSet::from_truth(&truth, s.min(n));
        let r = sgm_match(&target, &reference, &seeds, &SgmOptions::default().with_rng(RngSeed::new(seed))).unwrap();
        for &(t, q) in seeds.pairs() {
            prop_assert_eq!(r.perm.apply(t), q);
        }
        let lhs = r.objective.powi(2) + 2.0 * r.trace_value;
        let rhs = frob_sq(&reference) + frob_sq(target.weights());
        prop_assert!((lhs - rhs).abs() <= 1e-6 * rhs.max(1.0));
    }

    #[test]
    fn sgm_restarts_never_hurt(seed: u64, n in 4usize..=15, r in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = sample_er(n, 0.5, RngSeed::new(seed)).unwrap();
        let reference = sym_matrix(n, &mut rng);
        let opts = SgmOptions::default().with_rng(RngSeed::new(seed));
        let fewer = sgm_match(&target, &reference, &SeedSet::none(), &opts.clone().with_restarts(r)).unwrap();
        let more = sgm_match(&target, &reference, &SeedSet::none(), &opts.with_restarts(r + 1)).unwrap();
        prop_assert!(more.trace_value >= fewer.trace_value);
    }

    #[test]
    fn sgm_is_label_invariant(seed: u64, n in 4usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = weighted(n, &mut rng);
        let reference = sym_matrix(n, &mut rng);
        let seeds = SeedSet::new(vec![(0, 1), (2, 0)]).unwrap();
        let opts = SgmOptions::default().with_rng(RngSeed::new(seed));
        let base = sgm_match(&target, &reference, &seeds, &opts).unwrap();
        let q = perm(n, &mut rng);
        let relabeled = permute_graph(&target, &q).unwrap();
        let moved_seeds = SeedSet::new(seeds.pairs().iter().map(|&(t, r)| (q.apply(t), r)).collect()).unwrap();
        let other = sgm_match(&relabeled, &reference, &moved_seeds, &opts).unwrap();
        prop_assert_eq!(other.perm.compose(&q), base.perm);
    }

    #[test]
    fn pattern_parity_always_holds(seed: u64, n in 2usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = sample_er(n, 0.5, RngSeed::new(seed)).unwrap();
        let b2 = sample_er(n, 0.3, RngSeed::new(seed ^ 7)).unwrap();
        let c = pattern_counts(&b1, &b2, &perm(n, &mut rng)).unwrap();
        prop_assert!(c.parity_holds());
        prop_assert_eq!(c.total() as usize, n * (n - 1) / 2);
    }

    #[test]
    fn ari_is_symmetric_and_label_free(seed: u64, len in 2usize..=40, k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let (la, lb) = (Labeling::new(a.clone()), Labeling::new(b));
        let ab = adjusted_rand_index(&la, &lb).unwrap();
        prop_assert!((ab - adjusted_rand_index(&lb, &la).unwrap()).abs() <= 1e-12);
        let renamed = Labeling::new(a.iter().map(|&x| (x + 3) * 7).collect());
        prop_assert!((ab - adjusted_rand_index(&renamed, &lb).unwrap()).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn clustered_single_class_is_coarse(seed: u64) {
        let base = sample_er(20, 0.4, RngSeed::new(seed)).unwrap();
        let noise = NoiseSpec::uniform(0.1).unwrap();
        let graphs: Vec<Graph> = (0..4).map(|i| bitflip(&base, &noise, RngSeed::new(seed).child(i)).unwrap()).collect();
        let r = bitflip(&base, &noise, RngSeed::new(seed).child(9)).unwrap();
        let seeds = SeedSet::leading(3);
        let opts = SgmOptions::default().with_rng(RngSeed::new(seed));
        let coarse = coarse_match(&r, &graphs, &seeds, &opts).unwrap();
        let clustered = clustered_match(&r, std::slice::from_ref(&graphs), &seeds, &opts).unwrap();
        prop_assert_eq!(&clustered.perm, &coarse.perm);
        prop_assert_eq!(clustered.deltas[0], coarse.objective);
    }

    #[test]
    fn class_order_only_permutes_deltas(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = NoiseSpec::uniform(0.1).unwrap();
        let classes: Vec<Vec<Graph>> = (0..3u64)
            .map(|c| {
                let b = sample_er(16, 0.4, RngSeed::new(seed).child(100 + c)).unwrap();
                (0..3).map(|i| bitflip(&b, &noise, RngSeed::new(seed).child(c * 10 + i)).unwrap()).collect()
            })
            .collect();
        let r = bitflip(&classes[1][0], &noise, RngSeed::new(seed).child(99)).unwrap();
        let seeds = SeedSet::leading(3);
        let opts = SgmOptions::default().with_rng(RngSeed::new(seed));
        let base = clustered_match(&r, &classes, &seeds, &opts).unwrap();
        for d in &base.deltas {
            prop_assert!(*d >= 0.0);
        }
        let order = perm(3, &mut rng);
        // Position i of the reordered list holds class order[i].
        let reordered: Vec<Vec<Graph>> = (0..3).map(|i| classes[order.apply(i)].clone()).collect();
        let other = clustered_match(&r, &reordered, &seeds, &opts).unwrap();
        for i in 0..3 {
            prop_assert_eq!(other.deltas[i], base.deltas[order.apply(i)]);
        }
        prop_assert_eq!(base.deltas[order.apply(other.winner)], base.deltas[base.winner]);
    }

    #[test]
    fn kmeans_ignores_rigid_motions(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, per, dim) = (4, 6, 3);
        let centers = DMatrix::from_fn(k, dim, |_, _| rng.random_range(-20.0..20.0));
        let x = DMatrix::from_fn(k * per, dim, |i, j| centers[(i / per, j)] + rng.random_range(-0.5..0.5));
        let q = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let shift = DMatrix::from_fn(k * per, dim, |_, j| (j as f64 + 1.0) * 13.0);
        let moved = &x * q + shift;
        let a = kmeans(&x, k, 5, RngSeed::new(seed)).unwrap();
        let b = kmeans(&moved, k, 5, RngSeed::new(seed)).unwrap();
        prop_assert_eq!(adjusted_rand_index(&a.labeling, &b.labeling).unwrap(), 1.0);
    }

    #[test]
    fn cmds_reproduces_euclidean_distances(seed: u64, m in 3usize..=12, dim in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = DMatrix::from_fn(m, dim, |_, _| rng.random_range(-5.0..5.0));
        let dist = |x: &DMatrix<f64>, i: usize, j: usize| (x.row(i) - x.row(j)).norm();
        let d = DistanceMatrix::new(DMatrix::from_fn(m, m, |i, j| dist(&pts, i, j))).unwrap();
        let emb = cmds_embed(&d, dim.min(m - 1)).unwrap();
        for i in 0..m {
            for j in 0..m {
                prop_assert!((dist(&emb, i, j) - d.get(i, j)).abs() <= 1e-6);
            }
        }
    }
}
