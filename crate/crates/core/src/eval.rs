//! Conditional (on the hyperparameter mode) DIC and WAIC, and model ranking.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infer::FittedModel;
use crate::model::Variant;

/// Largest DIC gap treated as a tie.
pub const DIC_TIE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{0} did not converge; pass force to score it anyway")]
    NotConverged(Variant),
    #[error("n_draws must be at least 100, got {0}")]
    TooFewDraws(usize),
    #[error("no scores to rank")]
    Empty,
    #[error("csv output failed: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub n_draws: usize,
    pub seed: u64,
    /// Score non-converged fits.
    pub force: bool,
    /// Worker threads for the draws; results do not depend on it.
    pub threads: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { n_draws: 1000, seed: 0, force: false, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub variant: Variant,
    pub n_hyper: usize,
    pub n_fixed: usize,
    pub dic: f64,
    pub waic: f64,
    /// `−log p(y | η(posterior mean), σ̂_ε)`.
    pub neg_loglik: f64,
    pub p_d: f64,
    pub p_waic: f64,
    pub lppd: f64,
    pub dic_se: f64,
    pub waic_se: f64,
    pub p_d_se: f64,
    pub p_waic_se: f64,
    /// An effective-parameter count came out negative.
    pub negative_effective_params: bool,
    pub n_draws: usize,
    pub seed: u64,
}

/// Criteria computed from pointwise log densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    pub dic: f64,
    pub waic: f64,
    pub neg_loglik: f64,
    pub p_d: f64,
    pub p_waic: f64,
    pub lppd: f64,
    pub dic_se: f64,
    pub waic_se: f64,
    pub p_d_se: f64,
    pub p_waic_se: f64,
}

/// DIC and WAIC from `loglik[s][i]` (draw `s`, observation `i`) and the
/// pointwise log density at the posterior mean. Standard errors are
/// delta-method Monte-Carlo errors over draws.
pub fn criteria(loglik: &[Vec<f64>], at_mean: &[f64]) -> Criteria {
    let s = loglik.len();
    let n = at_mean.len();
    assert!(s >= 2, "need at least two draws");
    assert!(loglik.iter().all(|r| r.len() == n), "ragged log-likelihood matrix");
    let sf = s as f64;
    let dev: Vec<f64> = loglik.iter().map(|r| -2.0 * r.iter().sum::<f64>()).collect();
    let dbar = dev.iter().sum::<f64>() / sf;
    let d_mean = -2.0 * at_mean.iter().sum::<f64>();
    let p_d = dbar - d_mean;
    let dev_sd = sample_var(&dev, dbar).sqrt();

    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut psi_lppd = vec![0.0; s];
    let mut psi_p = vec![0.0; s];
    for i in 0..n {
        let col = loglik.iter().map(|r| r[i]);
        let max = col.clone().fold(f64::NEG_INFINITY, f64::max);
        let abar = col.clone().map(|v| (v - max).exp()).sum::<f64>() / sf;
        let lbar = col.clone().sum::<f64>() / sf;
        let v = col.clone().map(|l| (l - lbar).powi(2)).sum::<f64>() / (sf - 1.0);
        lppd += max + abar.ln();
        p_waic += v;
        for (k, l) in col.enumerate() {
            psi_lppd[k] += ((l - max).exp() - abar) / abar;
            psi_p[k] += (l - lbar).powi(2) - v;
        }
    }
    let psi_waic: Vec<f64> = psi_lppd.iter().zip(&psi_p).map(|(a, b)| a - b).collect();
    let se = |psi: &[f64]| (sample_var(psi, psi.iter().sum::<f64>() / sf) / sf).sqrt();
    Criteria {
        dic: dbar + p_d,
        waic: -2.0 * (lppd - p_waic),
        neg_loglik: d_mean / 2.0,
        p_d,
        p_waic,
        lppd,
        dic_se: 2.0 * dev_sd / sf.sqrt(),
        waic_se: 2.0 * se(&psi_waic),
        p_d_se: dev_sd / sf.sqrt(),
        p_waic_se: se(&psi_p),
    }
}

fn sample_var(x: &[f64], mean: f64) -> f64 {
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// SplitMix64 finalizer; decorrelates per-draw seeds.
fn draw_seed(master: u64, draw: u64) -> u64 {
    let mut z = master ^ draw.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_loglik(y: f64, eta: f64, s2: f64) -> f64 {
    -0.5 * (2.0 * PI * s2).ln() - (y - eta).powi(2) / (2.0 * s2)
}

/// Scores a fit by drawing the latent vector from its Gaussian conditional
/// at the hyperparameter mode.
pub fn score(fit: &FittedModel, cfg: &ScoreConfig) -> Result<ModelScore, EvalError> {
    if cfg.n_draws < 100 {
        return Err(EvalError::TooFewDraws(cfg.n_draws));
    }
    if !fit.result.converged && !cfg.force {
        return Err(EvalError::NotConverged(fit.variant()));
    }
    let s = &fit.structure;
    let rows = s.design_rows();
    let y = s.observations();
    let s2 = fit.hyper.sigma_eps.powi(2);
    let mean = fit.mean();
    let chol = &fit.evaluation.conditional.chol;
    let eta = |x: &[f64], row: &[(usize, f64)]| row.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
    let at_mean: Vec<f64> = rows.iter().zip(y).map(|(r, &yi)| gaussian_loglik(yi, eta(mean, r), s2)).collect();

    let one_draw = |d: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(cfg.seed, d as u64));
        let mut x = chol.sample(&mut rng);
        x.iter_mut().zip(mean).for_each(|(v, m)| *v += m);
        rows.iter().zip(y).map(|(r, &yi)| gaussian_loglik(yi, eta(&x, r), s2)).collect()
    };
    let threads = cfg.threads.clamp(1, cfg.n_draws);
    let loglik: Vec<Vec<f64>> = if threads == 1 {
        (0..cfg.n_draws).map(one_draw).collect()
    } else {
        let chunk = cfg.n_draws.div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|k| {
                    let lo = k * chunk;
                    let hi = ((k + 1) * chunk).min(cfg.n_draws);
                    scope.spawn(move || (lo..hi).map(one_draw).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("draw worker panicked")).collect()
        })
    };
    let c = criteria(&loglik, &at_mean);
    Ok(ModelScore {
        variant: fit.variant(),
        n_hyper: s.n_hyper(),
        n_fixed: s.covariates().len(),
        dic: c.dic,
        waic: c.waic,
        neg_loglik: c.neg_loglik,
        p_d: c.p_d,
        p_waic: c.p_waic,
        lppd: c.lppd,
        dic_se: c.dic_se,
        waic_se: c.waic_se,
        p_d_se: c.p_d_se,
        p_waic_se: c.p_waic_se,
        negative_effective_params: c.p_d < 0.0 || c.p_waic < 0.0,
        n_draws: cfg.n_draws,
        seed: cfg.seed,
    })
}

/// Scores in ascending DIC order with the selection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub scores: Vec<ModelScore>,
    pub selected: Variant,
    /// Several variants lay within [`DIC_TIE`] of the best DIC.
    pub tie: bool,
    pub dic_winner: Variant,
    pub waic_winner: Variant,
    /// The lowest-DIC and lowest-WAIC variants differ.
    pub disagreement: bool,
    /// Variants in ascending WAIC order.
    pub waic_order: Vec<Variant>,
}

/// Ascending DIC; among variants within [`DIC_TIE`] of the best, the one
/// with fewest hyperparameters, then fewest fixed effects, wins.
pub fn rank(scores: &[ModelScore]) -> Result<Ranking, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.dic.total_cmp(&b.dic).then(a.variant.number().cmp(&b.variant.number())));
    let best = sorted[0].dic;
    let close: Vec<&ModelScore> = sorted.iter().filter(|s| s.dic - best < DIC_TIE).collect();
    let selected = close
        .iter()
        .min_by(|a, b| a.n_hyper.cmp(&b.n_hyper).then(a.n_fixed.cmp(&b.n_fixed)).then(a.dic.total_cmp(&b.dic)))
        .expect("nonempty")
        .variant;
    let mut by_waic: Vec<&ModelScore> = sorted.iter().collect();
    by_waic.sort_by(|a, b| a.waic.total_cmp(&b.waic).then(a.variant.number().cmp(&b.variant.number())));
    let dic_winner = sorted[0].variant;
    let waic_winner = by_waic[0].variant;
    Ok(Ranking {
        tie: close.len() > 1,
        selected,
        dic_winner,
        waic_winner,
        disagreement: dic_winner != waic_winner,
        waic_order: by_waic.iter().map(|s| s.variant).collect(),
        scores: sorted,
    })
}

pub const COMPARISON_HEADER: [&str; 7] = ["variant", "dic", "waic", "neg_loglik", "p_d", "p_waic", "selected"];

/// Writes the comparison table in ranking order.
pub fn write_comparison_csv<W: Write>(ranking: &Ranking, out: W) -> Result<(), EvalError> {
    let io = |e: csv::Error| EvalError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER).map_err(io)?;
    for s in &ranking.scores {
        w.write_record([
            s.variant.to_string(),
            s.dic.to_string(),
            s.waic.to_string(),
            s.neg_loglik.to_string(),
            s.p_d.to_string(),
            s.p_waic.to_string(),
            (s.variant == ranking.selected).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fake(variant: Variant, dic: f64, waic: f64, n_hyper: usize, n_fixed: usize) -> ModelScore {
        ModelScore {
            variant,
            n_hyper,
            n_fixed,
            dic,
            waic,
            neg_loglik: 0.0,
            p_d: 1.0,
            p_waic: 1.0,
            lppd: 0.0,
            dic_se: 0.0,
            waic_se: 0.0,
            p_d_se: 0.0,
            p_waic_se: 0.0,
            negative_effective_params: false,
            n_draws: 100,
            seed: 0,
        }
    }

    #[test]
    fn degenerate_draws_have_no_effective_parameters() {
        let ll = vec![-1.2, -0.7, -2.5];
        let c = criteria(&vec![ll.clone(); 50], &ll);
        assert!(c.p_d.abs() < 1e-12, "{}", c.p_d);
        assert!(c.p_waic.abs() < 1e-12, "{}", c.p_waic);
        let d = -2.0 * ll.iter().sum::<f64>();
        assert!((c.dic - d).abs() < 1e-12);
        assert!((c.waic - d).abs() < 1e-12);
    }

    #[test]
    fn ranking_rules() {
        let r = rank(&[fake(Variant::M4, 120.0, 119.0, 8, 5), fake(Variant::M1, 100.0, 101.0, 14, 5)]).unwrap();
        assert_eq!(r.selected, Variant::M1);
        assert!(!r.tie && !r.disagreement);
        let r = rank(&[fake(Variant::M1, 100.0, 99.0, 14, 5), fake(Variant::M2, 100.6, 100.0, 14, 3)]).unwrap();
        assert_eq!(r.selected, Variant::M2);
        assert!(r.tie);
        assert_eq!(r.dic_winner, Variant::M1);
        let r = rank(&[fake(Variant::M1, 100.0, 105.0, 14, 5), fake(Variant::M4, 103.0, 99.0, 8, 5)]).unwrap();
        assert!(r.disagreement);
        assert_eq!(r.selected, Variant::M1);
        assert_eq!(r.waic_order, vec![Variant::M4, Variant::M1]);
        assert!(rank(&[]).is_err());
    }

    #[test]
    fn comparison_csv_layout() {
        let r = rank(&[fake(Variant::M4, 120.0, 119.0, 8, 5), fake(Variant::M1, 100.5, 101.0, 14, 5)]).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "variant,dic,waic,neg_loglik,p_d,p_waic,selected");
        assert_eq!(lines[1], "M1,100.5,101,0,1,1,true");
        assert_eq!(lines[2], "M4,120,119,0,1,1,false");
    }

    #[test]
    fn draw_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|d| draw_seed(7, d)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    proptest! {
        #[test]
        fn criteria_invariant_to_observation_order(seed in 0u64..1000, n in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ll: Vec<Vec<f64>> = (0..40).map(|_| (0..n).map(|_| -rng.random_range(0.1..4.0)).collect()).collect();
            let at: Vec<f64> = (0..n).map(|_| -rng.random_range(0.1..2.0)).collect();
            let a = criteria(&ll, &at);
            let rev = |v: &Vec<f64>| v.iter().rev().copied().collect::<Vec<f64>>();
            let b = criteria(&ll.iter().map(rev).collect::<Vec<_>>(), &rev(&at));
            prop_assert!((a.dic - b.dic).abs() < 1e-9 * a.dic.abs().max(1.0));
            prop_assert!((a.waic - b.waic).abs() < 1e-9 * a.waic.abs().max(1.0));
            // lppd never exceeds the pointwise maxima.
            let max_sum: f64 = (0..n).map(|i| ll.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max)).sum();
            prop_assert!(a.lppd <= max_sum + 1e-12);
            prop_assert!(a.p_waic >= 0.0);
        }
    }
}
