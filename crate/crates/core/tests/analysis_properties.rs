use multiband::analysis::{band_similarity, class_separation, cosine};
use multiband::fusion::BandFeatureSet;
use proptest::prelude::*;

#[test]
fn separation_of_opposed_axes() {
    // pairs: (e1,e2) 0, (-e1,-e2) 0 | (e1,-e1) -1, (e1,-e2) 0, (e2,-e1) 0, (e2,-e2) -1
    let r = class_separation(&[
        (vec![1.0, 0.0], "A"),
        (vec![0.0, 1.0], "A"),
        (vec![-1.0, 0.0], "B"),
        (vec![0.0, -1.0], "B"),
    ])
    .unwrap();
    assert_eq!(r.intra, 0.0);
    assert_eq!(r.inter, -0.5);
    assert_eq!(r.separation, 0.5);
}

fn labelled_vectors() -> impl Strategy<Value = Vec<(Vec<f64>, usize)>> {
    (2usize..6, 2usize..4).prop_flat_map(|(dim, classes)| {
        proptest::collection::vec(
            (proptest::collection::vec(-1.0f64..1.0, dim), 0..classes),
            2 * classes..=20,
        )
        .prop_map(move |mut v| {
            for (i, item) in v.iter_mut().take(2 * classes).enumerate() {
                item.1 = i % classes;
            }
            v
        })
    })
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant(u in proptest::collection::vec(-1.0f64..1.0, 6),
                                 v in proptest::collection::vec(-1.0f64..1.0, 6),
                                 a in 0.01f64..100.0, c in 0.01f64..100.0) {
        let su: Vec<f64> = u.iter().map(|x| a * x).collect();
        let sv: Vec<f64> = v.iter().map(|x| c * x).collect();
        prop_assert!((cosine(&su, &sv) - cosine(&u, &v)).abs() < 1e-12);
        prop_assert!(cosine(&u, &v).abs() <= 1.0);
    }

    #[test]
    fn separation_matches_pair_enumeration(vectors in labelled_vectors()) {
        let got = class_separation(&vectors).unwrap();
        let (mut same, mut diff) = (Vec::new(), Vec::new());
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                let c = cosine(&vectors[i].0, &vectors[j].0);
                if vectors[i].1 == vectors[j].1 { same.push(c) } else { diff.push(c) }
            }
        }
        let intra = same.iter().sum::<f64>() / same.len() as f64;
        let inter = diff.iter().sum::<f64>() / diff.len() as f64;
        prop_assert_eq!(got.intra, intra);
        prop_assert_eq!(got.inter, inter);
        prop_assert_eq!(got.separation, intra - inter);
    }

    #[test]
    fn separation_ignores_scaling_and_label_names(vectors in labelled_vectors(), scale in 0.1f64..10.0) {
        let base = class_separation(&vectors).unwrap();
        let scaled: Vec<(Vec<f64>, String)> = vectors
            .iter()
            .enumerate()
            .map(|(i, (v, l))| {
                let s = scale * (1.0 + i as f64 * 0.1);
                (v.iter().map(|x| s * x).collect(), format!("class-{}", 7 - l))
            })
            .collect();
        let other = class_separation(&scaled).unwrap();
        prop_assert!((base.intra - other.intra).abs() < 1e-12);
        prop_assert!((base.inter - other.inter).abs() < 1e-12);
    }

    #[test]
    fn baseband_self_similarity_is_one(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..6)) {
        let r = band_similarity(&[BandFeatureSet::new(rows.clone())]).unwrap();
        prop_assert_eq!(r.per_band_mean_cosine[0], 1.0);
        prop_assert_eq!(r.per_band_mean_cosine.len(), rows.len());
        prop_assert!(r.per_band_mean_cosine.iter().all(|c| c.is_finite() && c.abs() <= 1.0));
    }
}
