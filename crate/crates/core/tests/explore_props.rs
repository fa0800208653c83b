use proptest::prelude::*;
use speciescope::explore::{self, FnPredictor, MapRequest, McFilter, Parent};
use speciescope::model::Prediction;
use speciescope::{Genotype, GenotypeBounds, GENOTYPE_DIM};

fn banded(g: &Genotype) -> Prediction {
    let v = g.get(0);
    explore::certain(if v < 0.3 {
        "low"
    } else if v < 0.7 {
        "mid"
    } else {
        "high"
    })
}

fn scored(g: &Genotype) -> Prediction {
    let mut p = explore::certain("x");
    p.score = Some(10.0 * g.get(1));
    p
}

fn uniform_cdf_ks(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn skewed_bounds() -> GenotypeBounds {
    let lo: [f64; GENOTYPE_DIM] = std::array::from_fn(|d| -(d as f64));
    let hi: [f64; GENOTYPE_DIM] = std::array::from_fn(|d| 1.0 + 0.5 * d as f64);
    GenotypeBounds::new(lo, hi).unwrap()
}

#[test]
fn transition_on_a_threshold_oracle() {
    let oracle = FnPredictor(|g: &Genotype| explore::certain(if g.get(3) < 0.5 { "a" } else { "b" }));
    let start = Genotype::zeros();
    let end = Genotype::zeros().with_value(3, 1.0);
    let ts = explore::find_transitions(&oracle, &start, &end, 20).unwrap();
    assert_eq!(ts.len(), 1);
    assert!((ts[0].t - 0.5).abs() <= 1e-3);
    assert_eq!((ts[0].label_before.as_str(), ts[0].label_after.as_str()), ("a", "b"));

    let ts = explore::find_transitions(&FnPredictor(banded), &start, &Genotype::zeros().with_value(0, 1.0), 25).unwrap();
    assert_eq!(ts.len(), 2);
    assert!((ts[0].t - 0.3).abs() <= 1e-3);
    assert!((ts[1].t - 0.7).abs() <= 1e-3);
}

#[test]
fn every_strategy_stays_in_bounds() {
    let b = skewed_bounds();
    let parents: Vec<Parent> = (0..4)
        .map(|i| Parent {
            id: format!("p{i}"),
            genotype: b.clamp(&Genotype::new([i as f64 * 0.7 - 1.0; GENOTYPE_DIM]).unwrap()),
            score: Some(i as u8 * 3),
        })
        .collect();
    let n = 10_000;
    let mut all = explore::propose_random(n, &b, 1).unwrap();
    all.extend(explore::propose_mutation(&parents, 0.5, n, &b, 2).unwrap());
    all.extend(explore::propose_crossover(&parents, n, &b, 3).unwrap());
    let mc = explore::propose_montecarlo(&FnPredictor(scored), n, &b, &McFilter::MinScore(2.0), 4, 100_000).unwrap();
    assert_eq!(mc.accepted, n);
    all.extend(mc.proposals);
    assert!(all.iter().all(|p| b.contains(&p.genotype)));
}

#[test]
fn random_proposals_are_uniform() {
    let b = skewed_bounds();
    let n = 10_000;
    let props = explore::propose_random(n, &b, 7).unwrap();
    for d in 0..GENOTYPE_DIM {
        let xs: Vec<f64> = props.iter().map(|p| p.genotype.get(d)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let expected = 0.5 * (b.lo[d] + b.hi[d]);
        let sd = b.range(d) / 12f64.sqrt();
        assert!((mean - expected).abs() < 3.0 * sd / (n as f64).sqrt(), "dim {d}: mean {mean}");
        assert!(uniform_cdf_ks(xs, b.lo[d], b.hi[d]) < 0.05);
    }
}

#[test]
fn permissive_montecarlo_reproduces_random() {
    let b = GenotypeBounds::unit();
    let n = 10_000;
    let mc = explore::propose_montecarlo(&FnPredictor(scored), n, &b, &McFilter::MinScore(0.0), 5, n).unwrap();
    assert_eq!(mc.acceptance_rate, 1.0);
    assert!(mc.warning.is_none());
    let random = explore::propose_random(n, &b, 5).unwrap();
    for (a, r) in mc.proposals.iter().zip(&random) {
        assert_eq!(a.genotype, r.genotype);
    }
    for d in 0..GENOTYPE_DIM {
        let xs: Vec<f64> = mc.proposals.iter().map(|p| p.genotype.get(d)).collect();
        assert!(uniform_cdf_ks(xs, 0.0, 1.0) < 0.05);
    }
}

#[test]
fn montecarlo_filter_and_shortfall() {
    let b = GenotypeBounds::unit();
    let mc = explore::propose_montecarlo(&FnPredictor(scored), 50, &b, &McFilter::MinScore(9.0), 2, 20_000).unwrap();
    assert!(mc.proposals.iter().all(|p| p.genotype.get(1) >= 0.9));
    assert!((mc.acceptance_rate - 0.1).abs() < 0.05);
    let short = explore::propose_montecarlo(&FnPredictor(scored), 50, &b, &McFilter::MinScore(11.0), 2, 100).unwrap();
    assert_eq!(short.accepted, 0);
    assert_eq!(short.attempted, 100);
    assert!(short.warning.is_some());
    let cat = explore::propose_montecarlo(&FnPredictor(banded), 20, &b, &McFilter::Category("mid".into()), 2, 10_000).unwrap();
    assert!(cat.proposals.iter().all(|p| (0.3..0.7).contains(&p.genotype.get(0))));
}

#[test]
fn parent_selection_follows_score_weights() {
    let b = GenotypeBounds::unit();
    let parents = vec![
        Parent { id: "strong".into(), genotype: Genotype::new([0.9; GENOTYPE_DIM]).unwrap(), score: Some(10) },
        Parent { id: "weak".into(), genotype: Genotype::new([0.1; GENOTYPE_DIM]).unwrap(), score: Some(1) },
    ];
    let n = 10_000;
    let muts = explore::propose_mutation(&parents, 0.0, n, &b, 11).unwrap();
    let strong = muts.iter().filter(|p| p.provenance.parents[0] == "strong").count() as f64;
    let ratio = strong / (n as f64 - strong);
    assert!((ratio / 10.0 - 1.0).abs() <= 0.05, "mutation ratio {ratio}");
    for p in &muts {
        let parent = parents.iter().find(|q| q.id == p.provenance.parents[0]).unwrap();
        assert_eq!(p.genotype, parent.genotype);
    }

    let mut three = parents.clone();
    three.push(Parent { id: "unrated".into(), genotype: Genotype::new([0.5; GENOTYPE_DIM]).unwrap(), score: None });
    let xs = explore::propose_crossover(&three, n, &b, 12).unwrap();
    let first = |id: &str| xs.iter().filter(|p| p.provenance.parents[0] == id).count() as f64;
    let ratio = first("strong") / first("weak");
    assert!((ratio / 10.0 - 1.0).abs() <= 0.05, "crossover ratio {ratio}");
    for p in &xs {
        let (a, c) = (&p.provenance.parents[0], &p.provenance.parents[1]);
        assert_ne!(a, c);
        let ga = &three.iter().find(|q| &q.id == a).unwrap().genotype;
        let gc = &three.iter().find(|q| &q.id == c).unwrap().genotype;
        for d in 0..GENOTYPE_DIM {
            let v = p.genotype.get(d);
            assert!(v == ga.get(d) || v == gc.get(d));
        }
    }
}

#[test]
fn proposals_are_reproducible() {
    let b = GenotypeBounds::unit();
    assert_eq!(explore::propose_random(20, &b, 3).unwrap(), explore::propose_random(20, &b, 3).unwrap());
    assert_ne!(explore::propose_random(20, &b, 3).unwrap(), explore::propose_random(20, &b, 4).unwrap());
    assert!(explore::propose_crossover(&[], 3, &b, 1).is_err());
}

#[test]
fn toy_generator_separates_distant_genotypes() {
    let a = explore::toy_generate(&Genotype::zeros()).unwrap();
    assert!(a.data().iter().all(|&v| v == 0.0));
    let b = explore::toy_generate(&Genotype::new([0.8; GENOTYPE_DIM]).unwrap()).unwrap();
    let c = explore::toy_generate(&Genotype::new([0.8, 0.1, 0.9, 0.3, 0.2, 0.7, 0.5, 0.4, 0.6, 0.2, 0.3, 0.9]).unwrap()).unwrap();
    let differing = |x: &speciescope::GrayImage, y: &speciescope::GrayImage| {
        x.data().iter().zip(y.data()).filter(|(p, q)| (*p - *q).abs() > 1.0 / 255.0).count() as f64 / x.data().len() as f64
    };
    assert!(differing(&a, &b) >= 0.1);
    assert!(differing(&b, &c) >= 0.1);
    assert_eq!(b, explore::toy_generate(&Genotype::new([0.8; GENOTYPE_DIM]).unwrap()).unwrap());
    assert!(explore::toy_generate(&Genotype::new([1.5; GENOTYPE_DIM]).unwrap()).is_err());
}

#[test]
fn map_rejects_equal_dims_and_clips() {
    let req = MapRequest {
        base: Genotype::zeros(),
        dim_x: 2,
        dim_y: 2,
        range_x: (0.0, 1.0),
        range_y: (0.0, 1.0),
        resolution: (4, 4),
    };
    assert!(explore::cross_section(&FnPredictor(banded), &req, None).is_err());
    let req = MapRequest { dim_y: 5, range_x: (-1.0, 2.0), ..req };
    let map = explore::cross_section(&FnPredictor(banded), &req, Some(&GenotypeBounds::unit())).unwrap();
    assert_eq!(map.range_x, (0.0, 1.0));
    assert!(!map.warnings.is_empty());
}

proptest! {
    #[test]
    fn map_cells_equal_pointwise_predictions(
        base in prop::array::uniform12(0.0f64..1.0),
        dx in 0usize..GENOTYPE_DIM,
        dy in 0usize..GENOTYPE_DIM,
        nx in 2usize..9,
        ny in 2usize..9,
    ) {
        prop_assume!(dx != dy);
        let oracle = FnPredictor(|g: &Genotype| {
            let s = g.values().iter().enumerate().map(|(i, v)| v * (i as f64 + 1.0)).sum::<f64>();
            explore::certain(&format!("{}", (s * 3.0).floor() as i64 % 4))
        });
        let base = Genotype::new(base).unwrap();
        let req = MapRequest { base: base.clone(), dim_x: dx, dim_y: dy, range_x: (0.0, 1.0), range_y: (-0.5, 0.5), resolution: (nx, ny) };
        let map = explore::cross_section(&oracle, &req, None).unwrap();
        prop_assert_eq!(map.cells.len(), nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let cell = map.cell(ix, iy);
                let g = base.clone().with_value(dx, explore::grid_value((0.0, 1.0), ix, nx)).with_value(dy, explore::grid_value((-0.5, 0.5), iy, ny));
                use speciescope::explore::GenotypePredictor;
                prop_assert_eq!(&cell.label, &oracle.predict(&g).unwrap().predicted);
            }
        }
        prop_assert_eq!(map.cell(0, 0).x, 0.0);
        prop_assert_eq!(map.cell(nx - 1, ny - 1).y, 0.5);
    }

    #[test]
    fn transitions_match_label_changes(cuts in prop::collection::btree_set(5u32..95, 0..4)) {
        let cuts: Vec<f64> = cuts.into_iter().map(|c| c as f64 / 100.0).collect();
        prop_assume!(cuts.windows(2).all(|w| w[1] - w[0] > 0.05));
        let c2 = cuts.clone();
        let oracle = FnPredictor(move |g: &Genotype| explore::certain(&c2.iter().filter(|&&c| g.get(4) >= c).count().to_string()));
        let start = Genotype::zeros();
        let end = Genotype::zeros().with_value(4, 1.0);
        let ts = explore::find_transitions(&oracle, &start, &end, 40).unwrap();
        prop_assert_eq!(ts.len(), cuts.len());
        for (t, c) in ts.iter().zip(&cuts) {
            prop_assert!((t.t - c).abs() <= 1e-3);
        }
    }
}
