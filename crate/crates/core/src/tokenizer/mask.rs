use serde::{Deserialize, Serialize};

use crate::rng;

use super::TokenLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// One shuffle over all tokens regardless of scale.
    #[default]
    Uniform,
    /// `floor(ratio · N_s)` tokens masked independently within each scale.
    StratifiedPerScale,
}

/// Which tokens are hidden from the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    /// Indexed by token linear index.
    pub masked: Vec<bool>,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    seed: u64,
    ratio: f64,
    masked: Vec<usize>,
}

impl MaskPlan {
    pub fn num_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.masked.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i).collect()
    }

    /// `{"seed":n,"ratio":r,"masked":[indices]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MaskJson {
            seed: self.seed,
            ratio: self.ratio,
            masked: self.masked_indices(),
        })
        .expect("mask plan serializes")
    }

    pub fn from_json(s: &str, num_tokens: usize) -> serde_json::Result<Self> {
        let j: MaskJson = serde_json::from_str(s)?;
        let mut masked = vec![false; num_tokens];
        for i in j.masked {
            if let Some(m) = masked.get_mut(i) {
                *m = true;
            }
        }
        Ok(MaskPlan {
            masked,
            ratio: j.ratio,
            seed: j.seed,
        })
    }
}

/// `floor(ratio · n)`, tolerant of representation error such as
/// `0.29 · 100 = 28.999…`.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio.clamp(0.0, 1.0) * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Uniform masking: a seeded Fisher-Yates shuffle of the token indices, the
/// first `floor(ratio · N)` of which are masked.
pub fn sample_mask(layout: &TokenLayout, ratio: f64, seed: u64) -> MaskPlan {
    sample_mask_with(layout, ratio, seed, MaskStrategy::Uniform)
}

pub fn sample_mask_with(layout: &TokenLayout, ratio: f64, seed: u64, strategy: MaskStrategy) -> MaskPlan {
    let n = layout.len();
    let mut masked = vec![false; n];
    let mut rng = rng::stream(seed, &[rng::TAG_MASK]);
    let groups: Vec<Vec<usize>> = match strategy {
        MaskStrategy::Uniform => vec![(0..n).collect()],
        MaskStrategy::StratifiedPerScale => (0..layout.num_scales)
            .rev()
            .map(|s| (0..n).filter(|&i| layout.tokens[i].scale == s).collect())
            .collect(),
    };
    for mut idx in groups {
        let k = masked_count(ratio, idx.len());
        rng::fisher_yates(&mut idx, &mut rng);
        for &i in &idx[..k] {
            masked[i] = true;
        }
    }
    MaskPlan { masked, ratio, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenRec;

    fn layout(n: usize) -> TokenLayout {
        let tokens = (0..n)
            .map(|i| TokenRec {
                origin: [4 * i, 0, 0],
                scale: 0,
                linear_index: 0,
            })
            .collect();
        TokenLayout::from_tokens(tokens, 4, 2, [4 * n, 4, 4, 1], 0.25, 1e-3)
    }

    #[test]
    fn counts() {
        let l = layout(100);
        assert_eq!(sample_mask(&l, 0.0, 1).num_masked(), 0);
        assert_eq!(sample_mask(&l, 0.75, 1).num_masked(), 75);
        assert_eq!(sample_mask(&l, 1.0, 1).num_masked(), 100);
        assert_eq!(sample_mask(&l, 0.29, 1).num_masked(), 29);
        assert_eq!(sample_mask(&layout(7), 0.5, 1).num_masked(), 3);
    }

    #[test]
    fn deterministic_per_seed() {
        let l = layout(50);
        assert_eq!(sample_mask(&l, 0.75, 9), sample_mask(&l, 0.75, 9));
        assert_ne!(sample_mask(&l, 0.75, 9).masked, sample_mask(&l, 0.75, 10).masked);
    }

    #[test]
    fn stratified_masks_each_scale() {
        let mut tokens: Vec<TokenRec> = (0..8)
            .map(|i| TokenRec {
                origin: [4 * i, 0, 0],
                scale: 0,
                linear_index: 0,
            })
            .collect();
        tokens.extend((0..4).map(|i| TokenRec {
            origin: [8 * i, 8, 0],
            scale: 1,
            linear_index: 0,
        }));
        let l = TokenLayout::from_tokens(tokens, 4, 2, [32, 16, 8, 1], 0.25, 1e-3);
        let p = sample_mask_with(&l, 0.5, 3, MaskStrategy::StratifiedPerScale);
        let coarse = (0..12).filter(|&i| p.masked[i] && l.tokens[i].scale == 1).count();
        let fine = (0..12).filter(|&i| p.masked[i] && l.tokens[i].scale == 0).count();
        assert_eq!((coarse, fine), (2, 4));
    }

    #[test]
    fn json_round_trip() {
        let l = layout(10);
        let p = sample_mask(&l, 0.3, 42);
        let j: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(j["seed"], 42);
        assert_eq!(j["masked"].as_array().unwrap().len(), 3);
        assert_eq!(MaskPlan::from_json(&p.to_json(), 10).unwrap(), p);
    }
}
