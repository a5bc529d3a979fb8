//! Caption metrics against hand-worked values and a from-definition CIDEr.

mod support;

use supercap_core::metrics::{bleu, cider, corpus_bleu, modified_precision, rouge_l, CiderIdf};
use support::{cider_reference, words};

#[test]
fn identical_candidate_is_perfect() {
    let c = words("a man riding a wave on top of a surfboard");
    assert!((bleu(&c, &[c.clone()], 4) - 1.0).abs() < 1e-12);
    assert!((rouge_l(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
}

#[test]
fn repeated_word_is_clipped() {
    let c = words("the the the the the the the");
    let refs = [words("the cat is on the mat"), words("there is a cat on the mat")];
    assert_eq!(modified_precision(&c, &refs, 1), (2, 7));
}

#[test]
fn disjoint_two_image_corpus_scores_ten() {
    let refs = vec![vec![words("a red square on white")], vec![words("two blue circles over grass")]];
    let (per_image, mean) = cider(&[words("a red square on white"), words("two blue circles over grass")], &refs).unwrap();
    assert!((mean - 10.0).abs() < 1e-6);
    assert!(per_image.iter().all(|v| (v - 10.0).abs() < 1e-6));
}

#[test]
fn three_image_cider_matches_definition() {
    let cands = [
        "a cat sitting on a mat",
        "a dog runs in the park",
        "two people on a beach",
    ];
    let refs = [
        vec!["a cat is sitting on the mat", "a cat on a mat", "the cat sits on a red mat"],
        vec!["a dog running through a park", "the dog runs on the grass", "a brown dog in a park"],
        vec!["two people walking on the beach", "people on a sandy beach", "a couple walks by the sea"],
    ];
    let cand_w: Vec<Vec<String>> = cands.iter().map(|c| words(c)).collect();
    let ref_w: Vec<Vec<Vec<String>>> = refs.iter().map(|r| r.iter().map(|s| words(s)).collect()).collect();
    let (per_image, mean) = cider(&cand_w, &ref_w).unwrap();
    let oracle = cider_reference(
        &cands.iter().map(|c| c.split_whitespace().collect()).collect::<Vec<_>>(),
        &refs.iter().map(|r| r.iter().map(|s| s.split_whitespace().collect()).collect()).collect::<Vec<_>>(),
    );
    for (got, want) in per_image.iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!((mean - oracle.iter().sum::<f64>() / 3.0).abs() < 1e-9);
    assert!(oracle.iter().all(|&v| v > 0.0 && v < 10.0));
    let idf = CiderIdf::from_references(&ref_w).unwrap();
    assert!((idf.cider(&cand_w[1], &ref_w[1]) - oracle[1]).abs() < 1e-9);
}

#[test]
fn corpus_bleu_identity_and_empty_candidate() {
    let refs = vec![vec![words("a b c d e")], vec![words("f g h i")]];
    let perfect = corpus_bleu(&[words("a b c d e"), words("f g h i")], &refs, 4).unwrap();
    assert!(perfect.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let empty = corpus_bleu(&[Vec::<String>::new(), Vec::new()], &refs, 4).unwrap();
    assert!(empty.iter().all(|&v| v == 0.0));
}
