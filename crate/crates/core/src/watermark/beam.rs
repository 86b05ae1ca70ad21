use std::cmp::Ordering;

use super::sampling::log_softmax;
use super::{check_permuter, Generation, WatermarkRequest};
use crate::error::{Error, Result};
use crate::keying::{derive_perm_key, Permuter};
use crate::types::{check_ids, TokenId};

#[derive(Clone, Debug)]
struct Hypothesis {
    ids: Vec<TokenId>,
    score: f64,
    finished: bool,
}

/// Orders by score descending, then by token sequence ascending.
fn rank(a: &(f64, &[TokenId], Option<TokenId>), b: &(f64, &[TokenId], Option<TokenId>)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| {
        let ai = a.1.iter().chain(a.2.iter());
        let bi = b.1.iter().chain(b.2.iter());
        ai.cmp(bi)
    })
}

/// Beam search over the objective
/// `sum_j log softmax(L_j)(w_j) + beam_lambda * kappa * phi[P(k_j, w_j)]`.
///
/// With `beam_lambda = 1` each step's term is the perturbed log-probability
/// up to a constant, so a width-1 beam is greedy watermarked decoding.
/// Temperature and top-p do not apply. Completed hypotheses keep their score.
pub fn beam_watermark(request: &WatermarkRequest<'_>) -> Result<Generation> {
    let permuter = Permuter::new(request.params.backend, request.provider.vocab_size());
    beam_watermark_with(request, &permuter)
}

pub fn beam_watermark_with(request: &WatermarkRequest<'_>, permuter: &Permuter) -> Result<Generation> {
    let params = &request.params;
    let provider = request.provider;
    let size = provider.vocab_size();
    params.validate(size)?;
    check_ids(&request.context, size)?;
    check_permuter(permuter, params, size)?;
    let basis = params.basis(size)?;
    let phi = basis.vector(params.effective_kp(size)?)?;
    let width = params.sampling.beam_width;
    let weight = params.sampling.beam_lambda * params.kappa;
    let eos = provider.eos_id();
    let keep = params.n - 1;

    let mut beams = vec![Hypothesis {
        ids: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    let mut full = request.context.clone();
    let start = full.len();
    for _ in 0..params.max_tokens {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        // (score, parent ids, appended token, parent index)
        let mut candidates: Vec<(f64, usize, Option<TokenId>)> = Vec::new();
        for (hi, h) in beams.iter().enumerate() {
            if h.finished {
                candidates.push((h.score, hi, None));
                continue;
            }
            full.truncate(start);
            full.extend_from_slice(&h.ids);
            let logits = provider.next_logits(&full).map_err(|source| Error::PartialOutput {
                generated: beams[0].ids.clone(),
                source,
            })?;
            let mut step = log_softmax(&logits);
            if weight != 0.0 {
                let key = derive_perm_key(&params.mu, &full[full.len().saturating_sub(keep)..]);
                permuter.for_each_forward(key, |t, w| step[t as usize] += weight * phi.values[w as usize]);
            }
            let mut best: Vec<TokenId> = (0..size as TokenId).collect();
            let k = width.min(size);
            let by_step = |a: &TokenId, b: &TokenId| step[*b as usize].total_cmp(&step[*a as usize]).then(a.cmp(b));
            if k < size {
                best.select_nth_unstable_by(k - 1, by_step);
                best.truncate(k);
            }
            best.sort_by(by_step);
            candidates.extend(best.into_iter().map(|t| (h.score + step[t as usize], hi, Some(t))));
        }
        candidates.sort_by(|a, b| {
            rank(
                &(a.0, beams[a.1].ids.as_slice(), a.2),
                &(b.0, beams[b.1].ids.as_slice(), b.2),
            )
        });
        candidates.truncate(width);
        beams = candidates
            .into_iter()
            .map(|(score, hi, t)| {
                let parent = &beams[hi];
                match t {
                    None => parent.clone(),
                    Some(t) if Some(t) == eos => Hypothesis {
                        ids: parent.ids.clone(),
                        score,
                        finished: true,
                    },
                    Some(t) => {
                        let mut ids = parent.ids.clone();
                        ids.push(t);
                        Hypothesis {
                            ids,
                            score,
                            finished: false,
                        }
                    }
                }
            })
            .collect();
    }
    let best = beams.into_iter().next().expect("beam is never empty");
    Ok(Generation {
        ids: best.ids,
        stopped_at_eos: best.finished,
    })
}
