use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use proptest::prelude::*;

use vocalmap::corpus::{
    filter_records, stratified_split, CorpusManifest, Gender, ManifestSource, PathologyCategory, PathologyTable,
    RecordingMeta, Split, Status,
};
use vocalmap::dsp::Spectrogram;
use vocalmap::grad::Tensor;
use vocalmap::project::{joint_affinities, perplexity_search};
use vocalmap::rollout::{cls_relevance, rollout_steps, LayerAttribution, RelevanceMap};
use vocalmap::train::{case_label, roc_auc, uar, CaseLabel};
use vocalmap::viz::compose;

const LABELS: [(&str, PathologyCategory); 4] = [
    ("polyp", PathologyCategory::Organic),
    ("nodule", PathologyCategory::Organic),
    ("functional dysphonia", PathologyCategory::Inorganic),
    ("psychogenic aphonia", PathologyCategory::Inorganic),
];

fn table() -> PathologyTable {
    let mut t = PathologyTable::empty();
    for (name, cat) in LABELS {
        t.insert(name, cat);
    }
    t
}

fn record(i: usize, gender: bool, labels: &[usize]) -> RecordingMeta {
    let names: BTreeSet<String> = labels.iter().map(|&l| LABELS[l].0.to_string()).collect();
    let cats: BTreeSet<_> = labels.iter().map(|&l| LABELS[l].1).collect();
    let status = match cats.iter().next() {
        None => Status::Healthy,
        Some(PathologyCategory::Organic) => Status::Organic,
        Some(PathologyCategory::Inorganic) => Status::Inorganic,
    };
    RecordingMeta {
        id: format!("r{i:04}"),
        audio_path: PathBuf::from(format!("r{i:04}.wav")),
        speaker_id: format!("s{i}"),
        gender: if gender { Gender::Female } else { Gender::Male },
        pathology_labels: names,
        status,
    }
}

fn manifest() -> impl Strategy<Value = CorpusManifest> {
    prop::collection::vec((any::<bool>(), prop::collection::vec(0usize..4, 0..3)), 1..80).prop_map(|rows| {
        CorpusManifest {
            records: rows.iter().enumerate().map(|(i, (g, l))| record(i, *g, l)).collect(),
            source: ManifestSource::Synthetic,
            root: PathBuf::from("."),
        }
    })
}

fn ratios() -> impl Strategy<Value = [f64; 3]> {
    (1u32..20, 1u32..20, 1u32..20).prop_map(|(a, b, c)| {
        let s = (a + b + c) as f64;
        [a as f64 / s, b as f64 / s, c as f64 / s]
    })
}

fn labelled(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec((0usize..2, 0u8..5), n)
        .prop_filter("both classes present", |v| v.iter().any(|x| x.0 == 0) && v.iter().any(|x| x.0 == 1))
        .prop_map(|v| (v.iter().map(|x| x.0).collect(), v.iter().map(|x| x.1 as f64 / 4.0).collect()))
}

proptest! {
    #[test]
    fn filtering_is_idempotent_and_removes_only_mixed_records(m in manifest()) {
        let t = table();
        let once = filter_records(&m, &t);
        prop_assert_eq!(&filter_records(&once, &t), &once);
        for r in &m.records {
            let mixed = r.categories(&t).len() == 2;
            prop_assert_eq!(once.records.contains(r), !mixed);
        }
    }

    #[test]
    fn splits_partition_every_stratum(m in manifest(), r in ratios(), seed in any::<u64>()) {
        let m = filter_records(&m, &table());
        prop_assume!(!m.records.is_empty());
        let split = stratified_split(&m, r, seed).unwrap();
        let ids: HashSet<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
        let mut seen = HashSet::new();
        for s in Split::ALL {
            for id in split.ids(s) {
                prop_assert!(ids.contains(id));
                prop_assert!(seen.insert(id.to_string()), "{} assigned twice", id);
            }
        }
        prop_assert_eq!(seen.len(), ids.len());
        for status in [Status::Healthy, Status::Organic, Status::Inorganic] {
            for gender in [Gender::Male, Gender::Female] {
                let members: Vec<&RecordingMeta> =
                    m.records.iter().filter(|x| x.status == status && x.gender == gender).collect();
                for (k, s) in Split::ALL.into_iter().enumerate() {
                    let got = members.iter().filter(|x| split.get(&x.id) == Some(s)).count() as f64;
                    prop_assert!((got - members.len() as f64 * r[k]).abs() < 1.0);
                }
            }
        }
        prop_assert_eq!(&stratified_split(&m, r, seed).unwrap(), &split);
    }

    #[test]
    fn auc_equals_pairwise_counting((truth, scores) in labelled(2..40)) {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &ti) in truth.iter().enumerate() {
            for (j, &tj) in truth.iter().enumerate() {
                if ti == 1 && tj == 0 {
                    pairs += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        let (_, auc) = roc_auc(&truth, &scores).unwrap();
        prop_assert!((auc - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn uar_is_invariant_to_duplicating_the_data(
        (truth, scores) in labelled(2..30),
        k in 2usize..4,
    ) {
        let pred: Vec<usize> = scores.iter().map(|&s| usize::from(s >= 0.5)).collect();
        let rep = |v: &[usize]| v.iter().copied().cycle().take(v.len() * k).collect::<Vec<_>>();
        prop_assert!((uar(&truth, &pred).unwrap() - uar(&rep(&truth), &rep(&pred)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn case_labels_partition_the_samples(v in prop::collection::vec((0usize..2, 0usize..2, 0usize..2), 0..50)) {
        let mut counts = [0usize; 4];
        for &(a, b, t) in &v {
            let c = case_label(a, b, t);
            let expected = match (a == t, b == t) {
                (true, true) => CaseLabel::O,
                (false, false) => CaseLabel::X,
                (true, false) => CaseLabel::A,
                (false, true) => CaseLabel::B,
            };
            prop_assert_eq!(c, expected);
            counts[CaseLabel::ALL.iter().position(|&x| x == c).unwrap()] += 1;
        }
        prop_assert_eq!(counts.iter().sum::<usize>(), v.len());
    }

    #[test]
    fn rollout_never_decreases_and_keeps_the_identity(
        tokens in 2usize..7,
        layers in 1usize..4,
        raw in prop::collection::vec(0.0f64..1.0, 7 * 7 * 3),
    ) {
        let attribution: Vec<LayerAttribution> = (0..layers)
            .map(|l| LayerAttribution {
                a_bar: Tensor::from_vec(
                    tokens,
                    tokens,
                    raw[l * 49..l * 49 + tokens * tokens].to_vec(),
                ).unwrap(),
            })
            .collect();
        let steps = rollout_steps(&attribution, tokens).unwrap();
        prop_assert_eq!(&steps[0], &Tensor::identity(tokens));
        for w in steps.windows(2) {
            for (before, after) in w[0].data().iter().zip(w[1].data()) {
                prop_assert!(after >= before);
            }
        }
        let last = steps.last().unwrap();
        for i in 0..tokens {
            prop_assert!(last.get(i, i) >= 1.0);
        }
        let cls = cls_relevance(last).unwrap();
        prop_assert_eq!(cls.len(), tokens - 1);
        prop_assert_eq!(cls.as_slice(), &last.row(0)[1..]);
    }

    #[test]
    fn row_affinities_are_distributions(
        (dist, perplexity) in prop::collection::vec(0.0f64..50.0, 2..40)
            .prop_flat_map(|d| { let hi = 0.8 * d.len() as f64; (Just(d), 1.0..hi.max(1.1)) }),
    ) {
        let row = perplexity_search(&dist, perplexity).unwrap();
        prop_assert!((row.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(row.probs.iter().all(|p| *p >= 0.0 && p.is_finite()));
    }

    #[test]
    fn perplexity_beyond_the_row_length_is_unreachable(dist in prop::collection::vec(0.1f64..50.0, 2..20)) {
        let distinct = dist.iter().any(|d| (d - dist[0]).abs() > 1e-6);
        prop_assume!(distinct);
        prop_assert!(perplexity_search(&dist, dist.len() as f64 + 1.0).is_err());
    }

    #[test]
    fn joint_affinities_are_symmetric_and_sum_to_one(
        vectors in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..20),
    ) {
        let n = vectors.len();
        let p = joint_affinities(&vectors, (n as f64 / 3.0 - 0.5).min(5.0)).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        for i in 0..n {
            prop_assert_eq!(p[i * n + i], 0.0);
            for j in 0..n {
                prop_assert!(p[i * n + j] >= 0.0);
                prop_assert!((p[i * n + j] - p[j * n + i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn compose_changes_only_the_touched_pixel(
        bins in 1usize..6,
        frames in 1usize..8,
        seed_values in prop::collection::vec(-3.0f64..3.0, 48),
        map_values in prop::collection::vec(0.0f64..1.0, 48),
        at in any::<prop::sample::Index>(),
        new_value in 0.0f64..1.0,
    ) {
        let cells = bins * frames;
        let spec = Spectrogram::new(bins, frames, seed_values[..cells].to_vec(), frames).unwrap();
        let base = RelevanceMap::from_values(bins, frames, map_values[..cells].to_vec()).unwrap();
        let k = at.index(cells);
        let mut changed = map_values[..cells].to_vec();
        changed[k] = new_value;
        let changed = RelevanceMap::from_values(bins, frames, changed).unwrap();
        let (a, b) = (compose(&spec, &base).unwrap().image, compose(&spec, &changed).unwrap().image);
        let (bin, frame) = (k / frames, k % frames);
        for y in 0..bins {
            for x in 0..frames {
                if (x, y) != (frame, bins - 1 - bin) {
                    prop_assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }
    }
}
