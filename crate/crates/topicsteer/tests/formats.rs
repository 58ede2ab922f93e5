use proptest::prelude::*;
use topicsteer::container::{self, ContainerError};
use topicsteer::io::{self, CorpusFormat};
use topicsteer_core::corpus::Document;
use topicsteer_core::Tensor;

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..3).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), n)
            .prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
    })
}

proptest! {
    #[test]
    fn container_round_trips_bit_exact(ts in prop::collection::vec(tensor(), 0..4), note in ".{0,20}") {
        let names: Vec<String> = (0..ts.len()).map(|i| format!("t{i}")).collect();
        let refs: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(&ts).collect();
        let bytes = container::encode("k", &note, &refs);
        let (meta, back): (String, _) = container::decode("mem", &bytes, "k").unwrap();
        prop_assert_eq!(meta, note);
        prop_assert_eq!(back.len(), ts.len());
        for ((n, t), (m, u)) in refs.iter().zip(&back) {
            prop_assert_eq!(*n, m.as_str());
            prop_assert_eq!(t.shape(), u.shape());
            prop_assert!(t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn any_single_byte_corruption_is_rejected(t in tensor(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = container::encode("k", &(), &[("t", &t)]);
        let mut bad = bytes.clone();
        let i = pos.index(bad.len());
        bad[i] ^= 1 << bit;
        let r: Result<((), Vec<(String, Tensor)>), ContainerError> = container::decode("mem", &bad, "k");
        prop_assert!(r.is_err());
    }

    #[test]
    fn jsonl_corpus_round_trips(texts in prop::collection::vec(("[ -~\u{e9}\n\t\"]{0,30}", prop::option::of(0usize..5)), 0..8)) {
        let docs: Vec<Document> =
            texts.iter().enumerate().map(|(i, (t, l))| Document::new(format!("d{i}"), t.clone(), *l)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        io::write_corpus(&p, &docs).unwrap();
        prop_assert_eq!(io::load_corpus(&p, CorpusFormat::Jsonl).unwrap(), docs);
    }

    #[test]
    fn csv_floats_parse_back_exactly(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(io::fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
