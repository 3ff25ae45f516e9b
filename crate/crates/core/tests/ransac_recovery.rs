//! Recovery test for the robust similarity estimator: across many seeds,
//! contaminated correspondence sets must yield the true transform with the
//! outliers excluded from the consensus.

use hybrid_mot::{estimate_similarity_ransac, Point, RansacParams, SimilarityTransform};

struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

const INLIERS: usize = 14;
const OUTLIERS: usize = 6;

#[test]
fn contaminated_sets_recover_the_true_transform_across_seeds() {
    let truth = SimilarityTransform {
        theta: 0.1,
        s: 1.05,
        tx: 2.0,
        ty: -1.0,
    };
    let mut rng = Lcg(2024);
    for seed in 0..100u64 {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for _ in 0..INLIERS {
            let p = Point::new(rng.in_range(0.0, 100.0), rng.in_range(0.0, 100.0));
            dst.push(truth.apply(&p));
            src.push(p);
        }
        for _ in 0..OUTLIERS {
            let p = Point::new(rng.in_range(0.0, 100.0), rng.in_range(0.0, 100.0));
            let mapped = truth.apply(&p);
            // Rejection-sample a corrupted destination at least 3 px from
            // where the true transform would put it, so no outlier can
            // masquerade as an inlier at threshold 1.
            let corrupted = loop {
                let q = Point::new(rng.in_range(0.0, 100.0), rng.in_range(0.0, 100.0));
                if q.distance(&mapped) >= 3.0 {
                    break q;
                }
            };
            src.push(p);
            dst.push(corrupted);
        }

        let params = RansacParams {
            iterations: 100,
            inlier_threshold: 1.0,
            min_inliers: RansacParams::adaptive_min_inliers(src.len()),
            seed,
        };
        let (estimate, mask) = estimate_similarity_ransac(&src, &dst, &params)
            .unwrap_or_else(|e| panic!("seed {seed}: no model ({e})"));

        assert!(
            (estimate.theta - truth.theta).abs() <= 0.01,
            "seed {seed}: rotation {} vs {}",
            estimate.theta,
            truth.theta
        );
        assert!(
            (estimate.s - truth.s).abs() <= 0.01,
            "seed {seed}: scale {} vs {}",
            estimate.s,
            truth.s
        );
        assert!(
            (estimate.tx - truth.tx).abs() <= 0.5 && (estimate.ty - truth.ty).abs() <= 0.5,
            "seed {seed}: translation ({}, {}) vs ({}, {})",
            estimate.tx,
            estimate.ty,
            truth.tx,
            truth.ty
        );
        for (i, keep) in mask.iter().enumerate() {
            if i < INLIERS {
                assert!(*keep, "seed {seed}: clean correspondence {i} dropped");
            } else {
                assert!(!*keep, "seed {seed}: corrupted correspondence {i} kept");
            }
        }
    }
}

#[test]
fn estimate_is_identical_for_identical_seeds_and_different_for_most_others() {
    let truth = SimilarityTransform {
        theta: -0.3,
        s: 0.9,
        tx: 10.0,
        ty: 4.0,
    };
    let mut rng = Lcg(5);
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for i in 0..12 {
        let p = Point::new(rng.in_range(0.0, 64.0), rng.in_range(0.0, 64.0));
        let mut q = truth.apply(&p);
        if i >= 8 {
            q.x += rng.in_range(5.0, 20.0); // contamination
        }
        src.push(p);
        dst.push(q);
    }
    let params = RansacParams {
        iterations: 50,
        inlier_threshold: 1.0,
        min_inliers: 4,
        seed: 7,
    };
    let (a, mask_a) = estimate_similarity_ransac(&src, &dst, &params).unwrap();
    let (b, mask_b) = estimate_similarity_ransac(&src, &dst, &params).unwrap();
    assert_eq!(mask_a, mask_b);
    assert_eq!(
        a.theta.to_bits(),
        b.theta.to_bits(),
        "bitwise deterministic"
    );
    assert_eq!(a.s.to_bits(), b.s.to_bits());
    assert_eq!(a.tx.to_bits(), b.tx.to_bits());
    assert_eq!(a.ty.to_bits(), b.ty.to_bits());
}
