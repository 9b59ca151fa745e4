//! Recognition protocols: rank-1 identification per pose bin and 10-fold
//! verification ACC/AUC, evaluated on images frontalized by the model.
//!
//! Identification: one gallery entry per identity (its frontal image,
//! embedded without frontalization), every profile a probe; a probe is
//! correct iff its cosine-nearest gallery embedding shares its identity,
//! ties broken toward the lowest gallery index. Accuracies group by
//! absolute pose angle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::booster::Booster;
use crate::error::{Error, Result};
use crate::facedata::{
    make_keypoint_quadruple, make_random_quadruple, mix_seed, Dataset, ImageTensor, OcclusionMode,
};
use crate::generator::CoarseGenerator;
use crate::identity::FeatureExtractor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gallery,
    Probe,
}

/// One embedded image with its labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub identity: u32,
    pub pose_deg: i32,
    pub role: Role,
    pub embedding: Vec<f64>,
}

/// Which extractor tap feeds recognition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapChoice {
    Fc,
    Pool,
}

impl Default for TapChoice {
    fn default() -> Self {
        TapChoice::Fc
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Rank-1 identification accuracies, grouped by |pose|.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rank1Report {
    /// Accuracy per absolute pose angle.
    pub per_pose: BTreeMap<u32, f64>,
    pub overall: f64,
    pub probes: usize,
}

impl Rank1Report {
    /// Aligned-column table, poses as columns.
    pub fn table(&self) -> String {
        let mut header = String::from("pose   ");
        let mut row = String::from("rank-1 ");
        for (pose, acc) in &self.per_pose {
            header.push_str(&format!("{:>10}", format!("±{pose}°")));
            row.push_str(&format!("{:>10.2}", acc * 100.0));
        }
        header.push_str(&format!("{:>10}", "overall"));
        row.push_str(&format!("{:>10.2}", self.overall * 100.0));
        format!("{header}\n{row}\n")
    }
}

/// Nearest-gallery identification at rank 1.
pub fn rank1(gallery: &[EmbeddingRecord], probes: &[EmbeddingRecord]) -> Result<Rank1Report> {
    if gallery.is_empty() {
        return Err(Error::Eval("empty gallery".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for g in gallery {
        if !seen.insert(g.identity) {
            return Err(Error::Eval(format!("duplicate gallery identity {}", g.identity)));
        }
    }
    for p in probes {
        if !seen.contains(&p.identity) {
            return Err(Error::Eval(format!(
                "probe identity {} has no gallery entry",
                p.identity
            )));
        }
    }

    let mut per_pose_hits: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut hits = 0usize;
    for probe in probes {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (gi, g) in gallery.iter().enumerate() {
            let sim = cosine(&probe.embedding, &g.embedding);
            // Strictly-greater keeps the lowest gallery index on ties.
            if sim > best.0 {
                best = (sim, gi);
            }
        }
        let correct = gallery[best.1].identity == probe.identity;
        let bin = probe.pose_deg.unsigned_abs();
        let entry = per_pose_hits.entry(bin).or_insert((0, 0));
        entry.1 += 1;
        if correct {
            entry.0 += 1;
            hits += 1;
        }
    }
    let per_pose = per_pose_hits
        .into_iter()
        .map(|(pose, (h, n))| (pose, h as f64 / n as f64))
        .collect();
    Ok(Rank1Report {
        per_pose,
        overall: if probes.is_empty() { 0.0 } else { hits as f64 / probes.len() as f64 },
        probes: probes.len(),
    })
}

/// One verification trial: two embeddings, the same/different label, and
/// its cross-validation fold.
#[derive(Debug, Clone)]
pub struct VerificationPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub same_identity: bool,
    pub fold: usize,
}

pub const FOLDS: usize = 10;

/// Cross-validated verification results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Held-out accuracy per fold; excluded folds are None.
    pub fold_acc: Vec<Option<f64>>,
    /// Mean over included folds.
    pub acc: f64,
    /// Rank-statistic AUC over all pairs (ties count half).
    pub auc: f64,
    /// Folds excluded because they held a single class only.
    pub excluded_folds: Vec<usize>,
}

impl VerificationReport {
    pub fn table(&self) -> String {
        let mut out = String::from("fold   ");
        let mut row = String::from("ACC(%) ");
        for (i, acc) in self.fold_acc.iter().enumerate() {
            out.push_str(&format!("{i:>8}"));
            match acc {
                Some(a) => row.push_str(&format!("{:>8.2}", a * 100.0)),
                None => row.push_str(&format!("{:>8}", "-")),
            }
        }
        format!(
            "{out}\n{row}\nACC(%) {:>8.2}\nAUC(%) {:>8.2}\n",
            self.acc * 100.0,
            self.auc * 100.0
        )
    }
}

/// Threshold-based verification with 10-fold cross validation: for each
/// fold, the similarity threshold maximizing accuracy on the other nine
/// folds is applied to the held-out fold.
pub fn verify_10fold(pairs: &[VerificationPair]) -> Result<VerificationReport> {
    for p in pairs {
        if p.fold >= FOLDS {
            return Err(Error::Eval(format!("fold index {} out of range", p.fold)));
        }
    }
    for fold in 0..FOLDS {
        if !pairs.iter().any(|p| p.fold == fold) {
            return Err(Error::Eval(format!("fold {fold} is empty")));
        }
    }

    let sims: Vec<f64> = pairs.iter().map(|p| cosine(&p.a, &p.b)).collect();

    let accuracy_at = |threshold: f64, select: &dyn Fn(usize) -> bool| -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, p) in pairs.iter().enumerate() {
            if !select(i) {
                continue;
            }
            total += 1;
            let predicted_same = sims[i] >= threshold;
            if predicted_same == p.same_identity {
                correct += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    };

    let mut fold_acc: Vec<Option<f64>> = Vec::with_capacity(FOLDS);
    let mut excluded = Vec::new();
    for fold in 0..FOLDS {
        let held: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].fold == fold).collect();
        let has_pos = held.iter().any(|&i| pairs[i].same_identity);
        let has_neg = held.iter().any(|&i| !pairs[i].same_identity);
        if !(has_pos && has_neg) {
            excluded.push(fold);
            fold_acc.push(None);
            continue;
        }
        // Candidate thresholds: training-fold similarities plus a sentinel
        // below the minimum (predict everything same).
        let mut candidates: Vec<f64> = (0..pairs.len())
            .filter(|&i| pairs[i].fold != fold)
            .map(|i| sims[i])
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        candidates.insert(0, candidates.first().map_or(-1.0, |v| v - 1.0));

        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in &candidates {
            let acc = accuracy_at(t, &|i| pairs[i].fold != fold);
            // Strictly-greater keeps the smallest threshold on ties.
            if acc > best.0 {
                best = (acc, t);
            }
        }
        fold_acc.push(Some(accuracy_at(best.1, &|i| pairs[i].fold == fold)));
    }

    let included: Vec<f64> = fold_acc.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::Eval("all folds excluded".into()));
    }
    let acc = included.iter().sum::<f64>() / included.len() as f64;

    // Rank-statistic AUC over all pairs.
    let pos: Vec<f64> = (0..pairs.len()).filter(|&i| pairs[i].same_identity).map(|i| sims[i]).collect();
    let neg: Vec<f64> = (0..pairs.len()).filter(|&i| !pairs[i].same_identity).map(|i| sims[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Eval("need both genuine and impostor pairs for AUC".into()));
    }
    let mut concordant = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                concordant += 1.0;
            } else if p == n {
                concordant += 0.5;
            }
        }
    }
    let auc = concordant / (pos.len() as f64 * neg.len() as f64);

    Ok(VerificationReport {
        fold_acc,
        acc,
        auc,
        excluded_folds: excluded,
    })
}

fn tap_vector<F: Scalar>(
    extractor: &dyn FeatureExtractor<F>,
    image: &ImageTensor<F>,
    tap: TapChoice,
) -> Result<Vec<f64>> {
    let taps = extractor.extract(image)?;
    let v = match tap {
        TapChoice::Fc => taps.fc,
        TapChoice::Pool => taps.pool,
    };
    Ok(v.iter().map(|x| x.to_f64x()).collect())
}

/// Frontalizes every probe (occlude, four coarse passes, boost) and embeds
/// the boosted image; gallery images (already frontal) are embedded
/// directly. Gallery = the first record of each identity.
pub fn frontalize_and_embed<F: Scalar>(
    generator: &CoarseGenerator<F>,
    booster: &Booster<F>,
    extractor: &dyn FeatureExtractor<F>,
    dataset: &Dataset<F>,
    mode: OcclusionMode,
    seed: u64,
    tap: TapChoice,
) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    let mut galleried = std::collections::HashSet::new();
    for sample in &dataset.samples {
        if galleried.insert(sample.identity) {
            out.push(EmbeddingRecord {
                identity: sample.identity,
                pose_deg: 0,
                role: Role::Gallery,
                embedding: tap_vector(extractor, &sample.frontal_gt, tap)?,
            });
        }
    }
    for (idx, sample) in dataset.samples.iter().enumerate() {
        let quad = match mode {
            OcclusionMode::Keypoint => make_keypoint_quadruple(sample)?,
            OcclusionMode::Random => make_random_quadruple(sample, mix_seed(seed, idx as u64))?,
        };
        let coarse = generator.forward_quadruple(&quad)?;
        let boosted = booster.forward([
            &coarse[0].full,
            &coarse[1].full,
            &coarse[2].full,
            &coarse[3].full,
        ])?;
        out.push(EmbeddingRecord {
            identity: sample.identity,
            pose_deg: sample.pose_deg,
            role: Role::Probe,
            embedding: tap_vector(extractor, &boosted, tap)?,
        });
    }
    Ok(out)
}

/// Baseline embeddings without frontalization: each probe is its first
/// occluded variant, embedded directly. Gallery as in
/// `frontalize_and_embed`.
pub fn embed_occluded_baseline<F: Scalar>(
    extractor: &dyn FeatureExtractor<F>,
    dataset: &Dataset<F>,
    mode: OcclusionMode,
    seed: u64,
    tap: TapChoice,
) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    let mut galleried = std::collections::HashSet::new();
    for sample in &dataset.samples {
        if galleried.insert(sample.identity) {
            out.push(EmbeddingRecord {
                identity: sample.identity,
                pose_deg: 0,
                role: Role::Gallery,
                embedding: tap_vector(extractor, &sample.frontal_gt, tap)?,
            });
        }
    }
    for (idx, sample) in dataset.samples.iter().enumerate() {
        let quad = match mode {
            OcclusionMode::Keypoint => make_keypoint_quadruple(sample)?,
            OcclusionMode::Random => make_random_quadruple(sample, mix_seed(seed, idx as u64))?,
        };
        out.push(EmbeddingRecord {
            identity: sample.identity,
            pose_deg: sample.pose_deg,
            role: Role::Probe,
            embedding: tap_vector(extractor, &quad.images[0], tap)?,
        });
    }
    Ok(out)
}

/// Splits embedding records into (gallery, probes).
pub fn split_roles(records: &[EmbeddingRecord]) -> (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) {
    let gallery = records.iter().filter(|r| r.role == Role::Gallery).cloned().collect();
    let probes = records.iter().filter(|r| r.role == Role::Probe).cloned().collect();
    (gallery, probes)
}

/// Builds deterministic verification pairs from probe embeddings: every
/// genuine pair plus an equal number of impostor pairs, folds assigned
/// round-robin.
pub fn build_verification_pairs(records: &[EmbeddingRecord], seed: u64) -> Vec<VerificationPair> {
    use rand::RngCore;
    use rand::SeedableRng;
    let probes: Vec<&EmbeddingRecord> = records.iter().filter(|r| r.role == Role::Probe).collect();
    let mut genuine = Vec::new();
    let mut impostor_candidates = Vec::new();
    for i in 0..probes.len() {
        for j in i + 1..probes.len() {
            if probes[i].identity == probes[j].identity {
                genuine.push((i, j));
            } else {
                impostor_candidates.push((i, j));
            }
        }
    }
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(mix_seed(seed, 0x9A12));
    // Deterministic shuffle, then take as many impostors as genuines.
    for i in (1..impostor_candidates.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        impostor_candidates.swap(i, j);
    }
    impostor_candidates.truncate(genuine.len());

    let mut pairs = Vec::with_capacity(genuine.len() * 2);
    for (k, &(i, j)) in genuine.iter().enumerate() {
        pairs.push(VerificationPair {
            a: probes[i].embedding.clone(),
            b: probes[j].embedding.clone(),
            same_identity: true,
            fold: k % FOLDS,
        });
    }
    for (k, &(i, j)) in impostor_candidates.iter().enumerate() {
        pairs.push(VerificationPair {
            a: probes[i].embedding.clone(),
            b: probes[j].embedding.clone(),
            same_identity: false,
            fold: k % FOLDS,
        });
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(identity: u32, pose: i32, role: Role, e: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            identity,
            pose_deg: pose,
            role,
            embedding: e.to_vec(),
        }
    }

    #[test]
    fn exact_probe_embeddings_score_perfectly() {
        let gallery = vec![
            rec(0, 0, Role::Gallery, &[1.0, 0.0, 0.0]),
            rec(1, 0, Role::Gallery, &[0.0, 1.0, 0.0]),
            rec(2, 0, Role::Gallery, &[0.0, 0.0, 1.0]),
        ];
        let probes: Vec<_> = gallery
            .iter()
            .map(|g| rec(g.identity, 30, Role::Probe, &g.embedding))
            .collect();
        let report = rank1(&gallery, &probes).unwrap();
        assert_eq!(report.overall, 1.0);
        assert_eq!(report.per_pose[&30], 1.0);
    }

    #[test]
    fn tie_breaks_to_lowest_gallery_index() {
        let gallery = vec![
            rec(1, 0, Role::Gallery, &[1.0, 0.0]),
            rec(2, 0, Role::Gallery, &[0.0, 1.0]),
        ];
        let probes = vec![
            rec(1, 15, Role::Probe, &[0.9, 0.1]),
            rec(2, 15, Role::Probe, &[0.2, 0.8]),
            // Equidistant from both gallery entries; tie goes to index 0
            // (identity 1), so this identity-2 probe is wrong.
            rec(2, 15, Role::Probe, &[0.7, 0.7]),
        ];
        let report = rank1(&gallery, &probes).unwrap();
        assert!((report.overall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn probe_order_does_not_matter() {
        let gallery = vec![
            rec(0, 0, Role::Gallery, &[1.0, 0.2]),
            rec(1, 0, Role::Gallery, &[-0.3, 1.0]),
        ];
        let mut probes = vec![
            rec(0, 15, Role::Probe, &[0.8, 0.1]),
            rec(1, 30, Role::Probe, &[-0.2, 0.9]),
            rec(0, 30, Role::Probe, &[0.9, 0.4]),
            rec(1, 15, Role::Probe, &[0.1, 0.7]),
        ];
        let a = rank1(&gallery, &probes).unwrap();
        probes.reverse();
        let b = rank1(&gallery, &probes).unwrap();
        assert_eq!(a.per_pose, b.per_pose);
        assert_eq!(a.overall, b.overall);
    }

    #[test]
    fn gallery_errors() {
        assert!(rank1(&[], &[]).is_err());
        let dup = vec![
            rec(0, 0, Role::Gallery, &[1.0]),
            rec(0, 0, Role::Gallery, &[0.5]),
        ];
        assert!(rank1(&dup, &[]).is_err());
    }

    fn pair(a: f64, same: bool, fold: usize) -> VerificationPair {
        // One-dimensional embeddings make cosine similarity collapse to the
        // sign, so build 2-d vectors whose cosine equals `a` directly.
        let angle = a.clamp(-1.0, 1.0).acos();
        VerificationPair {
            a: vec![1.0, 0.0],
            b: vec![angle.cos(), angle.sin()],
            same_identity: same,
            fold,
        }
    }

    #[test]
    fn separable_scores_are_perfect() {
        let mut pairs = Vec::new();
        for f in 0..FOLDS {
            pairs.push(pair(0.9, true, f));
            pairs.push(pair(0.1, false, f));
        }
        let report = verify_10fold(&pairs).unwrap();
        assert_eq!(report.acc, 1.0);
        assert_eq!(report.auc, 1.0);
        assert!(report.excluded_folds.is_empty());
    }

    #[test]
    fn identical_scores_auc_half() {
        let mut pairs = Vec::new();
        for f in 0..FOLDS {
            pairs.push(pair(0.5, true, f));
            pairs.push(pair(0.5, false, f));
        }
        let report = verify_10fold(&pairs).unwrap();
        assert!((report.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_concordant_pair_count() {
        // 4 positives {0.9, 0.8, 0.7, 0.6}, 4 negatives {0.65, 0.4, 0.3, 0.2}
        // -> 15 of 16 pos/neg pairs concordant -> AUC = 0.9375.
        let pos = [0.9, 0.8, 0.7, 0.6];
        let neg = [0.65, 0.4, 0.3, 0.2];
        let mut pairs = Vec::new();
        for (k, &s) in pos.iter().enumerate() {
            pairs.push(pair(s, true, k));
        }
        for (k, &s) in neg.iter().enumerate() {
            pairs.push(pair(s, false, k + 4));
        }
        // Fill the remaining folds so every fold is populated.
        pairs.push(pair(0.95, true, 8));
        pairs.push(pair(0.05, false, 8));
        pairs.push(pair(0.93, true, 9));
        pairs.push(pair(0.07, false, 9));
        let report = verify_10fold(&pairs).unwrap();
        // AUC over all pairs: 6 positives, 6 negatives.
        let pos_all = [0.9, 0.8, 0.7, 0.6, 0.95, 0.93];
        let neg_all = [0.65, 0.4, 0.3, 0.2, 0.05, 0.07];
        let mut concordant = 0.0;
        for &p in &pos_all {
            for &n in &neg_all {
                if p > n {
                    concordant += 1.0;
                } else if p == n {
                    concordant += 0.5;
                }
            }
        }
        let want = concordant / 36.0;
        assert!((report.auc - want).abs() < 1e-9, "{} vs {want}", report.auc);
    }

    #[test]
    fn single_class_fold_is_excluded_and_reported() {
        let mut pairs = Vec::new();
        for f in 0..FOLDS {
            pairs.push(pair(0.9, true, f));
            if f != 3 {
                pairs.push(pair(0.1, false, f));
            }
        }
        let report = verify_10fold(&pairs).unwrap();
        assert_eq!(report.excluded_folds, vec![3]);
        assert!(report.fold_acc[3].is_none());
        assert_eq!(report.acc, 1.0);
    }

    #[test]
    fn acc_invariant_under_fold_relabeling() {
        let base: Vec<VerificationPair> = (0..40)
            .map(|k| {
                pair(
                    if k % 2 == 0 { 0.6 + 0.01 * (k as f64) } else { 0.3 - 0.002 * (k as f64) },
                    k % 2 == 0,
                    (k / 2) % FOLDS,
                )
            })
            .collect();
        let report_a = verify_10fold(&base).unwrap();
        let relabeled: Vec<VerificationPair> = base
            .iter()
            .map(|p| VerificationPair {
                a: p.a.clone(),
                b: p.b.clone(),
                same_identity: p.same_identity,
                fold: (p.fold + 7) % FOLDS,
            })
            .collect();
        let report_b = verify_10fold(&relabeled).unwrap();
        assert!((report_a.acc - report_b.acc).abs() < 1e-12);
        assert_eq!(report_a.auc, report_b.auc);
    }

    #[test]
    fn auc_invariant_under_monotone_transformation() {
        // Scaling all embeddings leaves cosine unchanged; instead transform
        // the similarity by reordering-preserving map via synthetic pairs.
        let scores = [0.9, 0.7, 0.55, 0.4, 0.35, 0.2];
        let labels = [true, true, false, true, false, false];
        let build = |f: &dyn Fn(f64) -> f64| -> Vec<VerificationPair> {
            scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(k, (&s, same))| pair(f(s), same, k % FOLDS))
                .collect()
        };
        let mut a_pairs = build(&|s| s);
        let mut b_pairs = build(&|s| s.powi(3)); // strictly monotone on these scores
        // Populate all folds.
        for f in 0..FOLDS {
            a_pairs.push(pair(0.99, true, f));
            a_pairs.push(pair(0.01, false, f));
            b_pairs.push(pair(0.99f64.powi(3), true, f));
            b_pairs.push(pair(0.01f64.powi(3), false, f));
        }
        let ra = verify_10fold(&a_pairs).unwrap();
        let rb = verify_10fold(&b_pairs).unwrap();
        assert!((ra.auc - rb.auc).abs() < 1e-12);
    }
}
