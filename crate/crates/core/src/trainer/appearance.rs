use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::clip::DetectionClip;
use super::train::{apply_update, AdamState, TrainConfig};
use crate::assoc_net::{appearance_matrix, AppearanceHead, EmbeddingProvider, ScorerParams};
use crate::error::{Error, Result};
use crate::grad::{appearance_loss_and_grad, association_matrices};
use crate::rng::{stream_rng, Stream};
use crate::sinkhorn::compose_permutations;

/// `Σ p log(p / u)` with `0 · log(0 / u) = 0`.
pub fn kl_loss(p: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != u.shape() {
        return Err(Error::shape(
            "kl_loss",
            format!("{:?}", p.shape()),
            format!("{:?}", u.shape()),
        ));
    }
    let mut total = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let (pij, uij) = (p[(i, j)], u[(i, j)]);
            if pij > 0.0 {
                if uij <= 0.0 {
                    return Err(Error::InfiniteDivergence { row: i, col: j });
                }
                total += pij * (pij / uij).ln();
            }
        }
    }
    Ok(total)
}

/// Soft correspondence `P_T` between the last (rows) and first (columns)
/// frame of a clip under `scorer`.
pub fn end_to_end_permutation(
    scorer: &ScorerParams,
    clip: &DetectionClip,
    sinkhorn_iters: usize,
) -> Result<DMatrix<f64>> {
    let assocs = association_matrices(scorer, clip, sinkhorn_iters)?;
    Ok(compose_permutations(&assocs)?.0)
}

fn crop_ids(clip: &DetectionClip, t: usize) -> Result<Vec<String>> {
    clip.detections[t]
        .iter()
        .enumerate()
        .map(|(i, d)| {
            d.crop_id.clone().ok_or_else(|| {
                Error::MissingEmbedding(format!(
                    "<none> (sequence {}, frame {}, detection {i})",
                    clip.sequence, clip.frame_indices[t]
                ))
            })
        })
        .collect()
}

fn raw_columns(provider: &dyn EmbeddingProvider, ids: &[String]) -> Result<DMatrix<f64>> {
    let cols = ids
        .iter()
        .map(|id| provider.raw_embedding(id).cloned())
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Fine-tuned head and the divergence recorded before every update.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceOutcome {
    pub head: AppearanceHead,
    pub losses: Vec<f64>,
}

struct PreparedClip {
    p_t: DMatrix<f64>,
    raw_last: DMatrix<f64>,
    raw_first: DMatrix<f64>,
}

fn prepare(
    clips: &[DetectionClip],
    scorer: &ScorerParams,
    provider: &dyn EmbeddingProvider,
    cfg: &TrainConfig,
) -> Result<Vec<PreparedClip>> {
    clips
        .iter()
        .map(|clip| {
            let last = clip.num_frames() - 1;
            Ok(PreparedClip {
                p_t: end_to_end_permutation(scorer, clip, cfg.sinkhorn_iters)?,
                raw_last: raw_columns(provider, &crop_ids(clip, last)?)?,
                raw_first: raw_columns(provider, &crop_ids(clip, 0)?)?,
            })
        })
        .collect()
}

/// Fits the head so that the row-softmax of last-to-first frame cosine
/// similarities matches `P_T` of the frozen scorer, one clip per update.
pub fn train_appearance(
    clips: &[DetectionClip],
    scorer: &ScorerParams,
    head: &AppearanceHead,
    provider: &dyn EmbeddingProvider,
    cfg: &TrainConfig,
) -> Result<AppearanceOutcome> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("appearance training needs at least one clip"));
    }
    if head.in_dim() != provider.dim() {
        return Err(Error::shape(
            "appearance head input",
            provider.dim(),
            head.in_dim(),
        ));
    }
    let prepared = prepare(clips, scorer, provider, cfg)?;
    let (rows, cols) = head.weights.shape();
    let mut theta: Vec<f64> = head.weights.as_slice().to_vec();
    let mut adam = AdamState::new(theta.len());
    let mut rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..cfg.appearance_epochs {
        order.shuffle(&mut rng);
        for &c in &order {
            let pc = &prepared[c];
            let weights = DMatrix::from_column_slice(rows, cols, &theta);
            let (loss, grad) = appearance_loss_and_grad(
                &weights,
                head.temperature,
                &pc.p_t,
                &pc.raw_last,
                &pc.raw_first,
            )
            .map_err(|e| Error::Diverged {
                iteration: losses.len(),
                detail: e.to_string(),
            })?;
            losses.push(loss);
            apply_update(
                cfg.optimizer,
                &mut adam,
                &mut theta,
                grad.as_slice(),
                cfg.appearance_learning_rate,
            );
        }
    }
    Ok(AppearanceOutcome {
        head: AppearanceHead {
            weights: DMatrix::from_column_slice(rows, cols, &theta),
            temperature: head.temperature,
        },
        losses,
    })
}

/// Mean over clips of `kl_loss(P_T, U_T)`.
pub fn mean_kl_loss(
    clips: &[DetectionClip],
    scorer: &ScorerParams,
    head: &AppearanceHead,
    provider: &dyn EmbeddingProvider,
    sinkhorn_iters: usize,
) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::Empty("no clips"));
    }
    let mut total = 0.0;
    for clip in clips {
        let p = end_to_end_permutation(scorer, clip, sinkhorn_iters)?;
        let last = crop_ids(clip, clip.num_frames() - 1)?;
        let first = crop_ids(clip, 0)?;
        let u = appearance_matrix(head, provider, &last, &first)?;
        total += kl_loss(&p, &u)?;
    }
    Ok(total / clips.len() as f64)
}

/// Smallest, over clips, of the gap between the lowest cosine of a
/// same-identity last/first frame pair and the highest cosine of a
/// different-identity pair. Detections without identity are ignored.
pub fn identity_cosine_margin(
    clips: &[DetectionClip],
    head: &AppearanceHead,
    provider: &dyn EmbeddingProvider,
) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for clip in clips {
        let last_t = clip.num_frames() - 1;
        let last = crop_ids(clip, last_t)?;
        let first = crop_ids(clip, 0)?;
        let (mut worst_match, mut best_mismatch) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, a) in last.iter().enumerate() {
            let ea = head.embed(provider, a)?;
            for (j, b) in first.iter().enumerate() {
                let (Some(ta), Some(tb)) = (
                    clip.detections[last_t][i].truth_id,
                    clip.detections[0][j].truth_id,
                ) else {
                    continue;
                };
                let cos = ea.dot(&head.embed(provider, b)?);
                if ta == tb {
                    worst_match = worst_match.min(cos);
                } else {
                    best_mismatch = best_mismatch.max(cos);
                }
            }
        }
        if worst_match.is_finite() && best_mismatch.is_finite() {
            margin = margin.min(worst_match - best_mismatch);
        }
    }
    if margin.is_finite() {
        Ok(margin)
    } else {
        Err(Error::Empty(
            "no labelled same- and different-identity pairs",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc_net::{BoundingBox, EmbeddingTable};
    use crate::trainer::ClipDetection;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        assert_eq!(kl_loss(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn hard_against_uniform_is_log_two_per_row() {
        let p = DMatrix::identity(2, 2);
        let u = DMatrix::from_element(2, 2, 0.5);
        assert!((kl_loss(&p, &u).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((kl_loss(&p, &u).unwrap() - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn zero_target_mass_is_infinite() {
        let p = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let u = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(
            kl_loss(&p, &u),
            Err(Error::InfiniteDivergence { row: 0, col: 1 })
        ));
        // Zero mass in P is fine.
        assert!(kl_loss(&u, &p).unwrap() > 0.0);
    }

    #[test]
    fn random_pairs_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut p = DMatrix::from_fn(3, 3, |_, _| rng.random_range(0.01..1.0));
            let mut u = DMatrix::from_fn(3, 3, |_, _| rng.random_range(0.01..1.0));
            for m in [&mut p, &mut u] {
                for mut row in m.row_iter_mut() {
                    let s = row.sum();
                    row /= s;
                }
            }
            assert!(kl_loss(&p, &u).unwrap() >= -1e-15);
        }
    }

    fn labelled_clip(table: &mut EmbeddingTable, rng: &mut ChaCha8Rng) -> DetectionClip {
        let k = 3;
        let protos: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let tag: u64 = rng.random();
        let frames = (0..4)
            .map(|t| {
                (0..k)
                    .map(|i| {
                        let id = format!("{tag}:{t}:{i}");
                        table.insert(id.clone(), protos[i].clone()).unwrap();
                        ClipDetection {
                            bbox: BoundingBox::new(
                                100.0 + 150.0 * i as f64,
                                200.0 + t as f64,
                                40.0,
                                80.0,
                                1.0,
                            ),
                            crop_id: Some(id),
                            truth_id: Some(i as i64),
                            filled: false,
                        }
                    })
                    .collect()
            })
            .collect();
        DetectionClip::new("c", vec![1, 2, 3, 4], frames).unwrap()
    }

    fn iou_scorer() -> ScorerParams {
        let mut params = ScorerParams::zeros(1);
        params.w1[(0, 4)] = 30.0;
        params.w2[0] = 1.0;
        params
    }

    #[test]
    fn fine_tuning_separates_identities_and_freezes_scorer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut table = EmbeddingTable::new(4);
        let clips: Vec<DetectionClip> = (0..3)
            .map(|_| labelled_clip(&mut table, &mut rng))
            .collect();
        let scorer = iou_scorer();
        let before = scorer.clone();
        let head = AppearanceHead::init(4, 4, &mut rng);
        let cfg = TrainConfig {
            appearance_learning_rate: 0.05,
            appearance_epochs: 100,
            optimizer: crate::trainer::Optimizer::Adam,
            ..TrainConfig::default()
        };
        let kl0 = mean_kl_loss(&clips, &scorer, &head, &table, 20).unwrap();
        let out = train_appearance(&clips, &scorer, &head, &table, &cfg).unwrap();
        let kl1 = mean_kl_loss(&clips, &scorer, &out.head, &table, 20).unwrap();
        assert!(kl1 < kl0, "{kl0} → {kl1}");
        assert!(identity_cosine_margin(&clips, &out.head, &table).unwrap() > 0.0);
        assert_eq!(scorer, before);
        assert_eq!(out.losses.len(), 300);
    }

    #[test]
    fn aligned_embeddings_barely_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut table = EmbeddingTable::new(4);
        let mut clip = labelled_clip(&mut table, &mut rng);
        let mut aligned = EmbeddingTable::new(3);
        for frame in &mut clip.detections {
            for d in frame.iter_mut() {
                let mut e = DVector::zeros(3);
                e[d.truth_id.unwrap() as usize] = 1.0;
                aligned.insert(d.crop_id.clone().unwrap(), e).unwrap();
            }
        }
        let head = AppearanceHead {
            temperature: 0.01,
            ..AppearanceHead::identity(3)
        };
        let cfg = TrainConfig {
            appearance_epochs: 5,
            ..TrainConfig::default()
        };
        let out = train_appearance(&[clip], &iou_scorer(), &head, &aligned, &cfg).unwrap();
        assert!(out.losses[0] < 1e-6, "{}", out.losses[0]);
        assert!((&out.head.weights - &head.weights).abs().max() < 1e-8);
    }

    #[test]
    fn missing_crop_is_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut table = EmbeddingTable::new(4);
        let mut clip = labelled_clip(&mut table, &mut rng);
        clip.detections[0][1].crop_id = Some("ghost".into());
        let err = train_appearance(
            &[clip],
            &iou_scorer(),
            &AppearanceHead::identity(4),
            &table,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }
}
