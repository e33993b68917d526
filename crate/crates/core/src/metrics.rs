//! Evaluation metrics: pass@1, pass@k (first-k and unbiased), the
//! embedding diversity score, and CSV export of curves.

use std::io::{Read, Write};
use std::time::Duration;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpError, JsonClient};
use crate::simenv::ExperimentLog;

pub const DIVERSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RangeError {
    #[error("question {question} has no responses")]
    EmptyQuestion { question: usize },
    #[error("k = {k} exceeds the {available} responses available")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("c = {c} exceeds n = {n}")]
    CorrectExceedsTotal { c: u64, n: u64 },
}

/// Per-question correctness of each sampled response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMatrix {
    correctness: Vec<Vec<bool>>,
}

impl RunMatrix {
    pub fn new(correctness: Vec<Vec<bool>>) -> Result<Self, RangeError> {
        if let Some(question) = correctness.iter().position(Vec::is_empty) {
            return Err(RangeError::EmptyQuestion { question });
        }
        Ok(Self { correctness })
    }

    pub fn questions(&self) -> &[Vec<bool>] {
        &self.correctness
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtOne {
    pub per_question: Vec<f64>,
    pub mean: f64,
}

pub fn pass_at_1(runs: &RunMatrix) -> PassAtOne {
    let per_question: Vec<f64> = runs
        .questions()
        .iter()
        .map(|q| q.iter().filter(|&&c| c).count() as f64 / q.len() as f64)
        .collect();
    let mean = if per_question.is_empty() {
        0.0
    } else {
        per_question.iter().sum::<f64>() / per_question.len() as f64
    };
    PassAtOne { per_question, mean }
}

/// Fraction of questions whose first `k` responses contain a correct one.
pub fn pass_at_k_simple(runs: &RunMatrix, k: usize) -> Result<f64, RangeError> {
    if k == 0 {
        return Err(RangeError::KZero);
    }
    if let Some(q) = runs.questions().iter().find(|q| q.len() < k) {
        return Err(RangeError::KTooLarge { k, available: q.len() });
    }
    let qs = runs.questions();
    if qs.is_empty() {
        return Ok(0.0);
    }
    let hits = qs.iter().filter(|q| q[..k].iter().any(|&c| c)).count();
    Ok(hits as f64 / qs.len() as f64)
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `1 - C(n-c, k) / C(n, k)` as an exact fraction.
pub fn pass_at_k_unbiased_exact(n: u64, c: u64, k: u64) -> Result<BigRational, RangeError> {
    if k == 0 {
        return Err(RangeError::KZero);
    }
    if c > n {
        return Err(RangeError::CorrectExceedsTotal { c, n });
    }
    if k > n {
        return Err(RangeError::KTooLarge { k: k as usize, available: n as usize });
    }
    let miss = BigRational::new(binomial(n - c, k).into(), binomial(n, k).into());
    Ok(BigRational::one() - miss)
}

pub fn pass_at_k_unbiased(n: u64, c: u64, k: u64) -> Result<f64, RangeError> {
    let exact = pass_at_k_unbiased_exact(n, c, k)?;
    Ok(exact.to_f64().expect("probability is representable"))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("need at least 2 vectors, got {0}")]
    TooFew(usize),
    #[error("vector {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("vector {0} is zero or not finite")]
    Degenerate(usize),
}

/// One embedding per response; all of equal dimension and non-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        if vectors.len() < 2 {
            return Err(EmbeddingError::TooFew(vectors.len()));
        }
        let dim = vectors[0].len();
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::Dimension { index, got: v.len(), expected: dim });
            }
            if v.iter().any(|x| !x.is_finite()) || v.iter().all(|x| *x == 0.0) {
                return Err(EmbeddingError::Degenerate(index));
            }
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("degenerate embedding set: mean cosine to centroid {mean_cosine} <= {floor}")]
pub struct DegenerateSetError {
    pub mean_cosine: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub diversity: f64,
    pub m: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reciprocal of the mean cosine similarity between each embedding and the
/// centroid. 1 for identical embeddings, larger for more spread-out sets.
pub fn diversity_score(es: &EmbeddingSet) -> Result<DiversityScore, DegenerateSetError> {
    let vs = es.vectors();
    let m = vs.len();
    if vs.iter().all(|v| v == &vs[0]) {
        return Ok(DiversityScore { diversity: 1.0, m });
    }
    let dim = vs[0].len();
    let mut centroid = vec![0.0; dim];
    for v in vs {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= m as f64;
    }
    let u_norm = dot(&centroid, &centroid).sqrt();
    if u_norm == 0.0 {
        return Err(DegenerateSetError { mean_cosine: 0.0, floor: DIVERSITY_FLOOR });
    }
    let mean_cos = vs
        .iter()
        .map(|v| (dot(v, &centroid) / (dot(v, v).sqrt() * u_norm)).clamp(-1.0, 1.0))
        .sum::<f64>()
        / m as f64;
    if mean_cos <= DIVERSITY_FLOOR {
        return Err(DegenerateSetError { mean_cosine: mean_cos, floor: DIVERSITY_FLOOR });
    }
    Ok(DiversityScore { diversity: 1.0 / mean_cos, m })
}

/// Source of text embeddings for diversity measurements.
pub trait EmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, HttpError>;
}

/// Embeds each distinct text as its own basis vector, so two texts are
/// either identical or orthogonal.
#[derive(Debug, Default, Clone, Copy)]
pub struct OneHotProvider;

impl EmbeddingProvider for OneHotProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, HttpError> {
        let mut vocab: Vec<&String> = texts.iter().collect();
        vocab.sort();
        vocab.dedup();
        Ok(texts
            .iter()
            .map(|t| {
                let idx = vocab.binary_search(&t).expect("text is in vocabulary");
                let mut v = vec![0.0; vocab.len()];
                v[idx] = 1.0;
                v
            })
            .collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// `POST {"texts": [..]}` → `{"vectors": [[..], ..]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    endpoint: String,
    http: JsonClient,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self { endpoint: endpoint.into(), http: JsonClient::new(timeout, 2) }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, HttpError> {
        let n = texts.len();
        self.http.post_validated(&self.endpoint, &EmbedRequest { texts }, |r: EmbedResponse| {
            if r.vectors.len() == n {
                Ok(r.vectors)
            } else {
                Err(format!("expected {n} vectors, got {}", r.vectors.len()))
            }
        })
    }
}

pub fn alignment_curve(log: &ExperimentLog) -> Vec<(u64, f64)> {
    log.checkpoints.iter().map(|c| (c.episode, c.alignment)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub episode: u64,
    pub alignment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtOneRow {
    pub question_id: usize,
    pub pass_at_1: f64,
}

pub fn write_alignment_csv<W: Write>(curve: &[(u64, f64)], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for &(episode, alignment) in curve {
        w.serialize(AlignmentRow { episode, alignment })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_alignment_csv<R: Read>(input: R) -> Result<Vec<(u64, f64)>, csv::Error> {
    csv::Reader::from_reader(input)
        .deserialize::<AlignmentRow>()
        .map(|r| r.map(|row| (row.episode, row.alignment)))
        .collect()
}

pub fn write_pass_at_1_csv<W: Write>(p: &PassAtOne, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (question_id, &pass_at_1) in p.per_question.iter().enumerate() {
        w.serialize(PassAtOneRow { question_id, pass_at_1 })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pass_at_1_csv<R: Read>(input: R) -> Result<Vec<PassAtOneRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(r: &[&[u8]]) -> RunMatrix {
        RunMatrix::new(r.iter().map(|q| q.iter().map(|&x| x == 1).collect()).collect()).unwrap()
    }

    #[test]
    fn pass_one_examples() {
        assert_eq!(pass_at_1(&rows(&[&[1, 0, 1, 0]])).mean, 0.5);
        assert_eq!(pass_at_1(&rows(&[&[1, 1, 1]])).mean, 1.0);
        let p = pass_at_1(&rows(&[&[1, 0, 0, 0], &[1, 0], &[1]]));
        assert_eq!(p.per_question, vec![0.25, 0.5, 1.0]);
        assert!((p.mean - 0.583333).abs() < 1e-6);
    }

    #[test]
    fn pass_k_simple_examples() {
        let m = rows(&[&[0, 0, 1, 0]]);
        assert_eq!(pass_at_k_simple(&m, 4).unwrap(), 1.0);
        assert_eq!(pass_at_k_simple(&m, 2).unwrap(), 0.0);
        assert_eq!(pass_at_k_simple(&m, 5), Err(RangeError::KTooLarge { k: 5, available: 4 }));
        assert_eq!(pass_at_k_simple(&m, 0), Err(RangeError::KZero));
        assert_eq!(RunMatrix::new(vec![vec![true], vec![]]), Err(RangeError::EmptyQuestion { question: 1 }));
    }

    #[test]
    fn unbiased_examples() {
        assert_eq!(pass_at_k_unbiased_exact(4, 2, 2).unwrap(), BigRational::new(5.into(), 6.into()));
        assert!((pass_at_k_unbiased(4, 2, 2).unwrap() - 0.833333).abs() < 1e-6);
        for k in 1..=7 {
            assert_eq!(pass_at_k_unbiased(7, 0, k).unwrap(), 0.0);
            assert_eq!(pass_at_k_unbiased(7, 7, k).unwrap(), 1.0);
        }
        assert_eq!(pass_at_k_unbiased(3, 4, 1), Err(RangeError::CorrectExceedsTotal { c: 4, n: 3 }));
        assert!(pass_at_k_unbiased(64, 3, 32).unwrap() > 0.8);
    }

    #[test]
    fn diversity_examples() {
        let same = EmbeddingSet::new(vec![vec![0.1, 0.7, 0.3]; 5]).unwrap();
        assert_eq!(diversity_score(&same).unwrap().diversity, 1.0);
        let orth = EmbeddingSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((diversity_score(&orth).unwrap().diversity - 2f64.sqrt()).abs() < 1e-9);
        let anti = EmbeddingSet::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(diversity_score(&anti).is_err());
    }

    #[test]
    fn embedding_set_validation() {
        assert_eq!(EmbeddingSet::new(vec![vec![1.0]]), Err(EmbeddingError::TooFew(1)));
        assert_eq!(
            EmbeddingSet::new(vec![vec![1.0], vec![1.0, 2.0]]),
            Err(EmbeddingError::Dimension { index: 1, got: 2, expected: 1 })
        );
        assert_eq!(EmbeddingSet::new(vec![vec![1.0], vec![0.0]]), Err(EmbeddingError::Degenerate(1)));
    }

    #[test]
    fn one_hot_provider() {
        let texts: Vec<String> = ["b", "a", "b"].iter().map(|s| s.to_string()).collect();
        let v = OneHotProvider.embed(&texts).unwrap();
        assert_eq!(v, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let d = diversity_score(&EmbeddingSet::new(v).unwrap()).unwrap();
        assert!(d.diversity > 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let curve = vec![(0, 0.25), (100, 0.5), (200, 0.875)];
        let mut buf = Vec::new();
        write_alignment_csv(&curve, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("episode,alignment\n0,0.25\n"));
        assert_eq!(read_alignment_csv(&buf[..]).unwrap(), curve);

        let p = pass_at_1(&rows(&[&[1, 0], &[1, 1]]));
        let mut buf = Vec::new();
        write_pass_at_1_csv(&p, &mut buf).unwrap();
        let back = read_pass_at_1_csv(&buf[..]).unwrap();
        assert_eq!(back.iter().map(|r| r.pass_at_1).collect::<Vec<_>>(), p.per_question);
    }

    proptest! {
        #[test]
        fn diversity_is_scale_invariant_and_at_least_one(
            vs in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 2..10),
            s in 0.1f64..10.0,
        ) {
            let a = diversity_score(&EmbeddingSet::new(vs.clone()).unwrap()).unwrap();
            let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * s).collect()).collect();
            let b = diversity_score(&EmbeddingSet::new(scaled).unwrap()).unwrap();
            prop_assert!((a.diversity - b.diversity).abs() < 1e-9);
            prop_assert!(a.diversity >= 1.0);
        }
    }
}
