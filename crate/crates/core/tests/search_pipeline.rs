use qdec_core::decoders::{aq_decode, aq_fit, binary_naive_decode, natural_decode};
use qdec_core::encoders::{itq_train, pq_train};
use qdec_core::nn::{train_decoder, TrainConfig};
use qdec_core::search::{
    adc_scan_decoded, adc_scan_pq, exact_knn, ground_truth, recall_at, rerank, sdc_scan_binary,
    search_all, SearchResult,
};
use qdec_core::synthetic::{GaussianMixture, MixtureSpec};
use qdec_core::{Decoder, DenseMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mixture(n: usize, d: usize, stream: u64) -> DenseMatrix {
    GaussianMixture::new(MixtureSpec {
        dim: d,
        components: 4,
        latent_dim: 3,
        ..MixtureSpec::default()
    })
    .sample(n, stream)
}

#[test]
fn database_as_its_own_reconstruction_is_exact_search() {
    let base = mixture(2000, 8, 1);
    let queries = mixture(40, 8, 2);
    let gt = ground_truth(&base, &queries).unwrap();
    let res = search_all(&queries, true, |_, q| adc_scan_decoded(q, &base, 10)).unwrap();
    for r in [1, 10] {
        assert_eq!(recall_at(&res, &gt, r).unwrap(), 1.0);
    }
    let knn = exact_knn(&base, &queries, 10).unwrap();
    assert_eq!(res, knn);
}

#[test]
fn random_rankings_have_recall_r_over_n() {
    // expectation R/n for a uniformly random ranking
    let n = 1000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 4000;
    let results: Vec<SearchResult> = (0..trials)
        .map(|_| {
            let mut ids: Vec<u32> = (0..n).collect();
            ids.shuffle(&mut rng);
            SearchResult {
                ids,
                dists: vec![0.0; n as usize],
            }
        })
        .collect();
    let gt = vec![17u32; trials];
    let r10 = recall_at(&results, &gt, 10).unwrap();
    // binomial standard deviation is about 0.0016
    assert!((r10 - 0.01).abs() < 0.006, "{r10}");
    let reversed = SearchResult {
        ids: (0..n).rev().collect(),
        dists: vec![0.0; n as usize],
    };
    assert_eq!(recall_at(&[reversed], &[0], 100).unwrap(), 0.0);
}

#[test]
fn exhaustive_rerank_with_exact_vectors_is_exact() {
    let base = mixture(500, 8, 3);
    let queries = mixture(20, 8, 4);
    let pq = pq_train(&base, 4, 2, 10, 0).unwrap();
    let codes = pq.encode(&base).unwrap();
    let gt = ground_truth(&base, &queries).unwrap();
    let first = search_all(&queries, false, |_, q| adc_scan_pq(q, &pq, &codes, 500)).unwrap();
    let second = search_all(&queries, false, |i, q| rerank(q, &first[i], &base, 500)).unwrap();
    assert_eq!(recall_at(&second, &gt, 1).unwrap(), 1.0);
    assert!(recall_at(&first, &gt, 1).unwrap() < 1.0);
    // L = 1 leaves the first stage alone
    for (i, q) in queries.iter_rows().enumerate() {
        assert_eq!(rerank(q, &first[i], &base, 1).unwrap().ids, first[i].ids);
    }
}

#[test]
fn binarized_query_ranks_like_hamming() {
    let x = mixture(3000, 16, 5);
    let itq = itq_train(&x, 16, 20, 0).unwrap();
    let base = mixture(800, 16, 6);
    let codes = itq.encode(&base).unwrap();
    let recon = binary_naive_decode(&itq, &codes).unwrap();
    let queries = mixture(10, 16, 7);
    let qcodes = itq.encode(&queries).unwrap();
    let qrec = binary_naive_decode(&itq, &qcodes).unwrap();
    for i in 0..10 {
        let a = adc_scan_decoded(qrec.row(i), &recon, 800).unwrap();
        let b = sdc_scan_binary(qcodes.code(i), &codes, 800).unwrap();
        // distance 4/d per differing bit, up to f32 rounding
        for (da, db) in a.dists.iter().zip(&b.dists) {
            assert!((da - 4.0 / 16.0 * db).abs() < 1e-4);
        }
        let mut ids_a: Vec<(u64, u32)> = a
            .ids
            .iter()
            .zip(&a.dists)
            .map(|(&id, &d)| ((d * 4.0).round() as u64, id))
            .collect();
        ids_a.sort();
        let ids_b: Vec<(u64, u32)> = b
            .ids
            .iter()
            .zip(&b.dists)
            .map(|(&id, &d)| (d as u64, id))
            .collect();
        assert_eq!(ids_a, ids_b);
    }
}

#[test]
fn trained_decoders_improve_on_the_natural_one() {
    let x = mixture(6000, 16, 8);
    let val = mixture(1000, 16, 9);
    let pq = pq_train(&x, 4, 4, 10, 0).unwrap();
    let (ct, cv) = (pq.encode(&x).unwrap(), pq.encode(&val).unwrap());
    let natural = natural_decode(&pq, &ct).unwrap().mse(&x).unwrap();
    let lut = aq_fit(&ct, &x, 0.0).unwrap();
    let aq = aq_decode(&lut, &ct).unwrap().mse(&x).unwrap();
    assert!(aq <= natural);
    // the residual block starts near the additive fit, so a short run suffices
    let cfg = TrainConfig {
        epochs: 10,
        residual: true,
        ..TrainConfig::default()
    };
    let out = train_decoder(&ct, &x, &cv, &val, &cfg).unwrap();
    assert!(out.diverged_at.is_none());
    assert_eq!(out.history.len(), 11);
    let (first, last) = (&out.history[0], &out.history[10]);
    assert!(last.train_mse < first.train_mse);
    let nn = out.decoder.decode(&ct).unwrap().mse(&x).unwrap();
    assert!((nn - last.train_mse).abs() <= 1e-6 * nn);
    assert!(nn < natural, "nn {nn} natural {natural} aq {aq}");
}
