use magan_core::data::generator;
use magan_core::gan::{disc_loss, AdaptiveMargin, MarginPolicy, MarginState};
use magan_core::io;
use magan_core::metrics::{batch_score, mode_coverage};
use magan_core::rng::Rng;
use magan_core::sim::{self, DiscreteDistPair};
use magan_core::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn simplex(k: usize, seed: u64) -> Vec<f64> {
    sim::random_simplex(k, &mut Rng::new(seed))
}

fn prob_rows(max_c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_c, 1..40usize, any::<u64>()).prop_map(|(c, n, seed)| {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| sim::random_simplex(c, &mut rng)).collect()
    })
}

proptest! {
    #[test]
    fn adaptive_margin_never_increases(
        m0 in 0.01f64..10.0,
        epochs in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..30),
    ) {
        let n = 64;
        let mut st = MarginState::new(m0);
        for (real, fake) in epochs {
            let before = st.margin;
            st.accumulate(real * n as f64, fake * n as f64, n);
            AdaptiveMargin.end_epoch(&mut st, n).unwrap();
            prop_assert!(st.margin <= before);
            prop_assert!(st.margin >= 0.0);
        }
    }

    #[test]
    fn hinge_dead_zone_matches_zero_margin(
        e_real in prop::collection::vec(0.0f64..5.0, 1..16),
        slack in prop::collection::vec(0.0f64..5.0, 1..16),
        m in 0.0f64..3.0,
    ) {
        let n = e_real.len().min(slack.len());
        let (e_real, e_fake): (Vec<f64>, Vec<f64>) =
            (e_real[..n].to_vec(), slack[..n].iter().map(|s| m + s).collect());
        let run = |margin: f64| {
            let mut g = Graph::new();
            let r = g.param(&Tensor::vector(e_real.clone()).unwrap());
            let f = g.param(&Tensor::vector(e_fake.clone()).unwrap());
            let l = disc_loss(&mut g, r, f, margin).unwrap();
            g.backward(l).unwrap();
            (g.scalar(l), g.grad_or_zeros(r), g.grad_or_zeros(f))
        };
        let (la, ra, fa) = run(m);
        let (lb, rb, fb) = run(0.0);
        prop_assert_eq!(la, lb);
        prop_assert_eq!(ra, rb);
        prop_assert_eq!(&fa, &fb);
        prop_assert!(fa.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_is_bounded_and_order_free(rows in prob_rows(12), shift in 0usize..40) {
        let c = rows[0].len() as f64;
        let s = batch_score(&rows).unwrap();
        prop_assert!((1.0..=c).contains(&s));
        let mut rotated = rows.clone();
        let len = rotated.len();
        rotated.rotate_left(shift % len);
        rotated.reverse();
        let t = batch_score(&rotated).unwrap();
        prop_assert!((s - t).abs() <= 1e-12 * s);
    }

    #[test]
    fn coverage_ignores_sample_order(seed in any::<u64>(), n in 1usize..300, shift in 0usize..300) {
        let ring = generator("ring8").unwrap();
        let centers = ring.centers().unwrap();
        let mut rng = Rng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| ring.sample_one(0.3, &mut rng).0).collect();
        let to_tensor = |rs: &[Vec<f64>]| Tensor::new(vec![rs.len(), 2], rs.concat()).unwrap();
        let a = mode_coverage(&to_tensor(&rows), &centers, 0.05, 3.0, 0.02).unwrap();
        let mut shuffled = rows.clone();
        shuffled.rotate_left(shift % n);
        shuffled.reverse();
        let b = mode_coverage(&to_tensor(&shuffled), &centers, 0.05, 3.0, 0.02).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(a.unassigned, b.unassigned);
        prop_assert_eq!(a.covered, b.covered);
    }

    #[test]
    fn optimal_disc_orders_energies(k in 2usize..64, m in 1e-3f64..10.0, seed in any::<u64>()) {
        let pair = DiscreteDistPair::new(simplex(k, seed), simplex(k, seed ^ 0x9e37), m).unwrap();
        let report = sim::check_lemma1(&pair);
        prop_assert!(report.holds);
        prop_assert!(report.e_data <= report.e_g + 1e-12);
        prop_assert!(report.e_g <= m + 1e-12);
        let id = sim::appendix_identity(&pair);
        prop_assert!(id.abs_diff <= 1e-12 * m.max(1.0));
        let rec = sim::margin_recurrence(&pair, m);
        prop_assert!(rec.m_next <= m);
        prop_assert!((rec.m_next - report.e_data).abs() <= 1e-12 * m.max(1.0));
    }

    #[test]
    fn projection_lands_on_simplex(v in prop::collection::vec(-10.0f64..10.0, 1..50)) {
        let p = sim::project_simplex(&v);
        prop_assert_eq!(p.len(), v.len());
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = sim::project_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn points_csv_round_trips_bits(
        cols in 1usize..4,
        raw in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..60),
    ) {
        let rows = raw.len() / cols;
        prop_assume!(rows > 0);
        let t = Tensor::new(vec![rows, cols], raw[..rows * cols].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        io::write_points(&t, &path).unwrap();
        let back = io::read_points(&path).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }
}
