use proptest::prelude::*;

use triphoton::geometry::{Direction3, Point3, Vec3, VoxelGrid};
use triphoton::infer::{
    class_log_likelihood, fisher_summary, mlem_step, total_log_likelihood, ActivityImage, ClassData,
    FisherMatrix, ListModeData, SystemRow,
};
use triphoton::physics::{compton_cos_beta, compton_edge, ComptonCone};
use triphoton::simulate::{DetectionEvent, Lor};
use triphoton::sysmodel::{kernel_at, KernelParams};
use triphoton::{ClassSet, ClassTag, DetectorAnnulus, SensitivityMap};

fn direction() -> impl Strategy<Value = Direction3> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(c, phi)| Direction3::from_spherical(c, phi))
}

fn in_material(det: &DetectorAnnulus, p: Point3) -> bool {
    let r = p.x.hypot(p.y);
    r >= det.inner_radius_mm - 1e-9 && r <= det.outer_radius_mm + 1e-9 && p.z.abs() <= det.axial_half_length_mm + 1e-9
}

fn along(p: Point3, d: Direction3, t: f64) -> Point3 {
    let v = d.vec();
    Vec3::new(p.x + t * v.x, p.y + t * v.y, p.z + t * v.z)
}

fn class_index() -> impl Strategy<Value = ClassTag> {
    (0usize..5).prop_map(|i| ClassTag::ALL[i])
}

/// Rows over `dim` voxels, each touching at least one voxel.
fn rows(dim: usize, max: usize) -> impl Strategy<Value = Vec<SystemRow>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, dim), 0..max).prop_map(|dense| {
        dense
            .into_iter()
            .map(|mut d| {
                d[0] += 0.05;
                SystemRow::from_dense(&d)
            })
            .collect()
    })
}

/// Events and sensitivity of one class.
type ClassFixture = (ClassTag, Vec<SystemRow>, Vec<f64>);

fn problem() -> impl Strategy<Value = (Vec<f64>, Vec<ClassFixture>)> {
    (1usize..8).prop_flat_map(|dim| {
        let lambda = prop::collection::vec(0.05f64..5.0, dim);
        let classes = prop::collection::vec(
            (class_index(), rows(dim, 40), prop::collection::vec(0.01f64..0.5, dim)),
            1..5,
        )
        .prop_map(|mut v| {
            v.sort_by_key(|c| c.0);
            v.dedup_by_key(|c| c.0);
            v
        });
        (lambda, classes)
    })
}

fn assemble(dim: usize, classes: &[ClassFixture]) -> (ListModeData, SensitivityMap) {
    let grid = VoxelGrid::new([dim, 1, 1], [5.0, 5.0, 10.0], Point3::ZERO).unwrap();
    let data = ListModeData::new(classes.iter().map(|(k, r, _)| ClassData::new(*k, r.clone())).collect()).unwrap();
    let sens: Vec<(ClassTag, Vec<f64>)> = classes.iter().map(|(k, _, s)| (*k, s.clone())).collect();
    (data, SensitivityMap::from_class_values(grid, &sens, 1, 0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ray_segments_are_ordered_and_inside_material(
        r in 0.0f64..140.0, phi in 0.0f64..6.3, z in -120.0f64..120.0, d in direction()
    ) {
        let det = DetectorAnnulus::default();
        let p = Vec3::new(r * phi.cos(), r * phi.sin(), z);
        let (segs, n) = det.material_segments(p, d);
        let mut last = 0.0;
        let mut length = 0.0;
        for &(t0, t1) in &segs[..n] {
            prop_assert!(t0 >= last && t1 > t0);
            prop_assert!(in_material(&det, along(p, d, 0.5 * (t0 + t1))));
            last = t1;
            length += t1 - t0;
        }
        let bound = (4.0 * det.outer_radius_mm.powi(2) + 4.0 * det.axial_half_length_mm.powi(2)).sqrt();
        prop_assert!(length <= bound);
        if n > 0 && segs[0].0 > 1e-6 {
            prop_assert!(!in_material(&det, along(p, d, 0.5 * segs[0].0)));
        }
    }

    #[test]
    fn compton_cosine_decreases_with_deposit(e0 in 30.0f64..3000.0, a in 0.001f64..0.999, b in 0.001f64..0.999) {
        prop_assume!((a - b).abs() > 1e-6);
        let edge = compton_edge(e0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let c_lo = compton_cos_beta(e0, lo * edge).unwrap();
        let c_hi = compton_cos_beta(e0, hi * edge).unwrap();
        prop_assert!(c_lo > c_hi);
        prop_assert!((-1.0 - 1e-12..=1.0).contains(&c_hi));
    }

    #[test]
    fn likelihood_is_additive_and_scale_invariant((lambda, classes) in problem(), c in 0.1f64..10.0) {
        let dim = lambda.len();
        let (data, sens) = assemble(dim, &classes);
        let grid = sens.grid.clone();
        let image = ActivityImage::new(grid, lambda).unwrap();
        let all = ClassSet::all();
        let total = total_log_likelihood(&data, &image, &sens, all).unwrap().value;
        let parts: f64 = classes
            .iter()
            .map(|(k, r, _)| class_log_likelihood(r, &image, sens.require(*k).unwrap()).unwrap().value)
            .sum();
        prop_assert!((total - parts).abs() <= 1e-12 * total.abs().max(1.0));
        let scaled = total_log_likelihood(&data, &image.scaled(c), &sens, all).unwrap().value;
        prop_assert!((total - scaled).abs() <= 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn mlem_conserves_counts((lambda, classes) in problem()) {
        let dim = lambda.len();
        let (data, sens) = assemble(dim, &classes);
        let subset = sens.classes();
        let n: usize = data.event_count(subset);
        prop_assume!(n > 0);
        let mut image = ActivityImage::new(sens.grid.clone(), lambda).unwrap();
        let total = sens.subset_total(subset).unwrap();
        for _ in 0..5 {
            image = mlem_step(&image, &data, &sens, subset).unwrap().image;
            prop_assert!(image.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
            let expected: f64 = image.values.iter().zip(&total).map(|(l, s)| l * s).sum();
            prop_assert!((expected - n as f64).abs() <= 1e-9 * n as f64);
        }
    }

    #[test]
    fn kernels_are_non_negative_and_continuous(
        x in -40.0f64..40.0, y in -40.0f64..40.0, z in -40.0f64..40.0, e1 in 50.0f64..600.0
    ) {
        let cone = ComptonCone::from_interactions(
            Vec3::new(0.0, 80.0, 10.0),
            Vec3::new(5.0, 95.0, 0.0),
            1157.0,
            e1,
        ).unwrap();
        let event = DetectionEvent {
            class: ClassTag::C12,
            lor: Some(Lor { p1: Vec3::new(-80.0, 3.0, 0.0), p2: Vec3::new(80.0, -3.0, 5.0), dt_ps: None }),
            cones: vec![cone],
            true_origin: None,
        };
        let params = KernelParams::default();
        let p = Vec3::new(x, y, z);
        let k = kernel_at(&event, p, &params);
        prop_assert!(k >= 0.0 && k.is_finite());
        // Smoothness: the change is linear in the step.
        let h = 1e-6;
        let d1 = kernel_at(&event, Vec3::new(x + h, y, z), &params) - k;
        let d2 = kernel_at(&event, Vec3::new(x + 2.0 * h, y, z), &params) - k;
        prop_assert!((d2 - 2.0 * d1).abs() <= 1e-3 * d1.abs() + 1e-12 * k);
    }

    #[test]
    fn lor_kernel_changes_little_near_the_line(
        t in -60.0f64..60.0, off in -8.0f64..8.0, dir in direction()
    ) {
        // Within two standard deviations of the line the log-slope is below
        // 1/mm, so a 1e-6 mm move changes the kernel by < 1e-6 relative.
        let event = DetectionEvent {
            class: ClassTag::C02,
            lor: Some(Lor { p1: Vec3::new(-80.0, 0.0, 0.0), p2: Vec3::new(80.0, 0.0, 0.0), dt_ps: None }),
            cones: vec![],
            true_origin: None,
        };
        let params = KernelParams::default();
        let p = Vec3::new(t, off, 0.0);
        let k = kernel_at(&event, p, &params);
        let moved = kernel_at(&event, along(p, dir, 1e-6), &params);
        prop_assert!((moved - k).abs() < 1e-6 * k);
    }

    #[test]
    fn fisher_trace_is_additive(a in prop::collection::vec(-5.0f64..5.0, 9), b in prop::collection::vec(-5.0f64..5.0, 9)) {
        let sym = |m: &[f64]| -> Vec<f64> {
            (0..9).map(|i| { let (r, c) = (i / 3, i % 3); 0.5 * (m[r * 3 + c] + m[c * 3 + r]) }).collect()
        };
        let matrix = |class, data| FisherMatrix {
            class,
            dim: 3,
            data,
            n_events: 1.0,
            mc_samples: 1,
            projection_se: vec![0.0; 3],
        };
        let ma = matrix(ClassTag::C02, sym(&a));
        let mb = matrix(ClassTag::C12, sym(&b));
        let report = fisher_summary(&[ma.clone(), mb.clone()]).unwrap();
        prop_assert!((report.total_trace - ma.trace() - mb.trace()).abs() <= 1e-9);
        let single = fisher_summary(std::slice::from_ref(&ma)).unwrap();
        prop_assert_eq!(single.total, ma.data);
    }
}

#[test]
fn zero_matrices_give_zero_scores() {
    let zero = FisherMatrix {
        class: ClassTag::C01,
        dim: 4,
        data: vec![0.0; 16],
        n_events: 1.0,
        mc_samples: 1,
        projection_se: vec![0.0; 4],
    };
    let report = fisher_summary(&[zero]).unwrap();
    assert_eq!(report.ranking[0].trace, 0.0);
    assert_eq!(report.ranking[0].lambda_max, 0.0);
}
