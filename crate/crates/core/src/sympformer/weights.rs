use rand_chacha::ChaCha20Rng;

use super::SympFormerConfig;
use crate::instances::{gaussian_matrix, rng};
use crate::{Error, Matrix, Result, Vector};

/// Query and key projections of one head, each `d_head x d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub q: Matrix,
    pub k: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    /// `d x d` value matrix, symmetrized on use. Softmax blocks use it as the
    /// mobility `B`, linear blocks as `V`.
    pub value: Matrix,
    /// MLP expansion `4d x d`.
    pub w_in: Matrix,
    /// MLP projection `d x 4d`.
    pub w_out: Matrix,
    pub ln_gain: Vector,
    pub ln_y_gain: Vector,
    pub ln_v_gain: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SympFormerWeights {
    /// `vocab x d`.
    pub tok_emb: Matrix,
    /// `block_size x d`.
    pub pos_emb: Matrix,
    pub ln_f_gain: Vector,
    /// `vocab x d`.
    pub lm_head: Matrix,
    pub layers: Vec<LayerWeights>,
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!("{name} is {:?}, expected ({rows}, {cols})", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

fn expect_len(name: &str, v: &Vector, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{name} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

impl SympFormerWeights {
    /// Gaussian initialization with standard deviation `1/sqrt(d)`; the head
    /// uses `1/d` so that initial predictions are close to uniform. Gains are 1.
    pub fn random(cfg: &SympFormerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let s = 1.0 / (d as f64).sqrt();
        let mut r: ChaCha20Rng = rng(seed);
        let tok_emb = gaussian_matrix(&mut r, cfg.vocab_size, d, s);
        let pos_emb = gaussian_matrix(&mut r, cfg.block_size, d, s);
        let lm_head = gaussian_matrix(&mut r, cfg.vocab_size, d, 1.0 / d as f64);
        let layers = (0..cfg.n_layers)
            .map(|_| {
                let heads = (0..cfg.n_heads)
                    .map(|_| HeadWeights {
                        q: gaussian_matrix(&mut r, dh, d, s),
                        k: gaussian_matrix(&mut r, dh, d, s),
                    })
                    .collect();
                let v = gaussian_matrix(&mut r, d, d, s);
                LayerWeights {
                    heads,
                    value: (&v + v.transpose()) * 0.5,
                    w_in: gaussian_matrix(&mut r, 4 * d, d, s),
                    w_out: gaussian_matrix(&mut r, d, 4 * d, 0.5 * s),
                    ln_gain: Vector::from_element(d, 1.0),
                    ln_y_gain: Vector::from_element(d, 1.0),
                    ln_v_gain: Vector::from_element(d, 1.0),
                }
            })
            .collect();
        Ok(Self {
            tok_emb,
            pos_emb,
            ln_f_gain: Vector::from_element(d, 1.0),
            lm_head,
            layers,
        })
    }

    pub fn check_shapes(&self, cfg: &SympFormerConfig) -> Result<()> {
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        expect_shape("tok_emb", &self.tok_emb, cfg.vocab_size, d)?;
        expect_shape("pos_emb", &self.pos_emb, cfg.block_size, d)?;
        expect_len("ln_f.gain", &self.ln_f_gain, d)?;
        expect_shape("lm_head", &self.lm_head, cfg.vocab_size, d)?;
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Dimension(format!(
                "{} layers of weights for {} configured",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.heads.len() != cfg.n_heads {
                return Err(Error::Dimension(format!("layer {l} has {} heads", layer.heads.len())));
            }
            for (h, head) in layer.heads.iter().enumerate() {
                expect_shape(&format!("layers.{l}.heads.{h}.q"), &head.q, dh, d)?;
                expect_shape(&format!("layers.{l}.heads.{h}.k"), &head.k, dh, d)?;
            }
            expect_shape(&format!("layers.{l}.value"), &layer.value, d, d)?;
            expect_shape(&format!("layers.{l}.mlp.w_in"), &layer.w_in, 4 * d, d)?;
            expect_shape(&format!("layers.{l}.mlp.w_out"), &layer.w_out, d, 4 * d)?;
            expect_len(&format!("layers.{l}.ln.gain"), &layer.ln_gain, d)?;
            expect_len(&format!("layers.{l}.ln_y.gain"), &layer.ln_y_gain, d)?;
            expect_len(&format!("layers.{l}.ln_v.gain"), &layer.ln_v_gain, d)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_weights_have_config_shapes() {
        let cfg = SympFormerConfig::new(3, 2, 6, 5, 13).unwrap();
        let w = SympFormerWeights::random(&cfg, 0).unwrap();
        w.check_shapes(&cfg).unwrap();
        assert_eq!(w, SympFormerWeights::random(&cfg, 0).unwrap());
        assert_ne!(w, SympFormerWeights::random(&cfg, 1).unwrap());
        let other = SympFormerConfig::new(3, 3, 6, 5, 13).unwrap();
        assert!(w.check_shapes(&other).is_err());
    }
}
