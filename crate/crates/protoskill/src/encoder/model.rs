//! The encoder network and its parameter plumbing.

use super::{ClipWindow, EncoderConfig};
use crate::error::{Error, Result};
use crate::numkit::{Checkpoint, Grads, Mlp, MlpVars, Tape, Tensor, Var};
use rand::Rng;

/// Skill encoder parameters: per-frame backbone, one self-attention block
/// (query/key/value maps + position-wise feed-forward, both residual), and
/// a linear head projecting the pooled feature to the embedding space.
#[derive(Debug, Clone)]
pub struct SkillEncoder {
    pub cfg: EncoderConfig,
    pub d_obs: usize,
    pub backbone: Mlp,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub ffn: Mlp,
    pub proj: Mlp,
    /// Fixed sinusoidal position table, L x width. Not a parameter.
    pos: Tensor,
}

/// Tape handles for one binding of the encoder's parameters.
pub struct EncoderVars {
    pub backbone: MlpVars,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub ffn: MlpVars,
    pub proj: MlpVars,
    pos: Var,
}

/// Interleaved sin/cos position codes, the standard geometric frequency
/// ladder. Values in [-1, 1], matching tanh feature scale.
fn sinusoidal_positions(l: usize, width: usize) -> Tensor {
    let mut pe = Tensor::zeros(l, width);
    for p in 0..l {
        for i in 0..width {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / width as f64);
            let angle = p as f64 * rate;
            pe.data[p * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl SkillEncoder {
    pub fn new(cfg: &EncoderConfig, d_obs: usize, rng: &mut impl Rng) -> Result<SkillEncoder> {
        cfg.validate()?;
        let h = cfg.width();
        let mut backbone_dims = vec![d_obs];
        backbone_dims.extend(&cfg.backbone_dims);
        let mut ffn_dims = vec![h];
        ffn_dims.extend(&cfg.temporal_dims);
        ffn_dims.push(h);
        let scale = 1.0 / (h as f64).sqrt();
        Ok(SkillEncoder {
            cfg: cfg.clone(),
            d_obs,
            backbone: Mlp::new(&backbone_dims, rng)?,
            wq: Tensor::randn(h, h, scale, rng),
            wk: Tensor::randn(h, h, scale, rng),
            wv: Tensor::randn(h, h, scale, rng),
            ffn: Mlp::new(&ffn_dims, rng)?,
            proj: Mlp::new(&[h, cfg.d], rng)?,
            pos: sinusoidal_positions(cfg.l, h),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            backbone: self.backbone.bind(tape),
            wq: tape.leaf(self.wq.clone()),
            wk: tape.leaf(self.wk.clone()),
            wv: tape.leaf(self.wv.clone()),
            ffn: self.ffn.bind(tape),
            proj: self.proj.bind(tape),
            pos: tape.constant(self.pos.clone()),
        }
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            backbone: self.backbone.bind_frozen(tape),
            wq: tape.constant(self.wq.clone()),
            wk: tape.constant(self.wk.clone()),
            wv: tape.constant(self.wv.clone()),
            ffn: self.ffn.bind_frozen(tape),
            proj: self.proj.bind_frozen(tape),
            pos: tape.constant(self.pos.clone()),
        }
    }

    /// One clip through backbone + attention block, down to a pooled 1 x
    /// width row (pre-projection).
    fn pool_clip(&self, tape: &mut Tape, vars: &EncoderVars, clip: &ClipWindow) -> Result<Var> {
        if clip.frames.shape() != (self.cfg.l, self.d_obs) {
            return Err(Error::shape(
                "encode",
                format!("{}x{} clip", self.cfg.l, self.d_obs),
                format!("{}x{}", clip.frames.rows, clip.frames.cols),
            ));
        }
        let h = self.cfg.width() as f64;
        let x = tape.constant(clip.frames.clone());
        let feat = self.backbone.forward(tape, &vars.backbone, x)?;
        let feat = tape.add(feat, vars.pos)?;

        let q = tape.matmul(feat, vars.wq)?;
        let k = tape.matmul(feat, vars.wk)?;
        let v = tape.matmul(feat, vars.wv)?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / h.sqrt());
        let weights = tape.softmax_rows(scores);
        let mixed = tape.matmul(weights, v)?;
        let attended = tape.add(feat, mixed)?;

        let ff = self.ffn.forward(tape, &vars.ffn, attended)?;
        let blocked = tape.add(attended, ff)?;
        Ok(tape.mean_axis0(blocked))
    }

    /// Encodes a batch of clips on a tape; rows of the result are
    /// unit-norm d-dimensional embeddings, one per clip.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        clips: &[ClipWindow],
    ) -> Result<Var> {
        if clips.is_empty() {
            return Err(Error::InvalidArgument("encode_batch: no clips".into()));
        }
        let pooled: Vec<Var> = clips
            .iter()
            .map(|c| self.pool_clip(tape, vars, c))
            .collect::<Result<_>>()?;
        let stacked = tape.concat_all(&pooled)?;
        let projected = self.proj.forward(tape, &vars.proj, stacked)?;
        Ok(tape.l2_normalize_rows(projected, 1e-12))
    }

    /// Tape-free single-clip embedding (1 x d).
    pub fn encode(&self, clip: &ClipWindow) -> Result<Tensor> {
        self.encode_all(std::slice::from_ref(clip))
    }

    /// Tape-free batch embedding (B x d).
    pub fn encode_all(&self, clips: &[ClipWindow]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let z = self.encode_batch(&mut tape, &vars, clips)?;
        Ok(tape.value(z).clone())
    }

    /// Mutable parameter list; order matches [`EncoderVars::grads`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.backbone.params_mut();
        out.push(&mut self.wq);
        out.push(&mut self.wk);
        out.push(&mut self.wv);
        out.extend(self.ffn.params_mut());
        out.extend(self.proj.params_mut());
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named_params("backbone");
        out.push(("attn.wq".into(), &self.wq));
        out.push(("attn.wk".into(), &self.wk));
        out.push(("attn.wv".into(), &self.wv));
        out.extend(self.ffn.named_params("ffn"));
        out.extend(self.proj.named_params("proj"));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.named_params_mut("backbone");
        out.push(("attn.wq".into(), &mut self.wq));
        out.push(("attn.wk".into(), &mut self.wk));
        out.push(("attn.wv".into(), &mut self.wv));
        out.extend(self.ffn.named_params_mut("ffn"));
        out.extend(self.proj.named_params_mut("proj"));
        out
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "kind": "encoder",
            "cfg": self.cfg,
            "d_obs": self.d_obs,
        });
        let mut ck = Checkpoint::new(meta);
        for (name, t) in self.named_params() {
            ck.insert(&name, t)?;
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<SkillEncoder> {
        let cfg: EncoderConfig = serde_json::from_value(
            ck.meta
                .get("cfg")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing encoder cfg".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("bad encoder cfg: {e}")))?;
        let d_obs = ck.meta_usize("d_obs")?;
        // Architecture from config, weights overwritten below; the rng
        // seed is irrelevant.
        let mut rng = crate::numkit::seeded_rng(0, "encoder-load");
        let mut enc = SkillEncoder::new(&cfg, d_obs, &mut rng)?;
        for (name, param) in enc.named_params_mut() {
            let stored = ck.tensor(&name)?;
            if stored.shape() != param.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match model {:?}",
                    stored.shape(),
                    param.shape()
                )));
            }
            *param = stored.clone();
        }
        Ok(enc)
    }
}

impl EncoderVars {
    /// Gradients in the same order as [`SkillEncoder::params_mut`].
    pub fn grads(&self, grads: &Grads, tape: &Tape) -> Vec<Tensor> {
        let mut out = self.backbone.grads(grads, tape);
        out.push(grads.get(self.wq, tape));
        out.push(grads.get(self.wk, tape));
        out.push(grads.get(self.wv, tape));
        out.extend(self.ffn.grads(grads, tape));
        out.extend(self.proj.grads(grads, tape));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::max_grad_check_error;
    use crate::numkit::seeded_rng;

    fn tiny() -> (EncoderConfig, SkillEncoder) {
        let cfg = EncoderConfig {
            l: 3,
            stride: 1,
            m: 6,
            d: 4,
            backbone_dims: vec![6],
            temporal_dims: vec![5],
        };
        let mut rng = seeded_rng(1, "enc-test");
        let enc = SkillEncoder::new(&cfg, 5, &mut rng).unwrap();
        (cfg, enc)
    }

    fn clip_from(rows: &[Vec<f64>]) -> ClipWindow {
        ClipWindow {
            frames: Tensor::from_rows(rows).unwrap(),
            episode: "e".into(),
            start: 0,
        }
    }

    fn random_clip(l: usize, d: usize, seed: u64) -> ClipWindow {
        let mut rng = seeded_rng(seed, "clip");
        ClipWindow {
            frames: Tensor::randn(l, d, 1.0, &mut rng),
            episode: "e".into(),
            start: 0,
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let (_, enc) = tiny();
        let clips: Vec<ClipWindow> = (0..5).map(|s| random_clip(3, 5, s)).collect();
        let z = enc.encode_all(&clips).unwrap();
        assert_eq!(z.shape(), (5, 4));
        for i in 0..5 {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "row {i} norm {n}");
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let (_, enc) = tiny();
        let c = random_clip(3, 5, 9);
        let a = enc.encode(&c).unwrap();
        let b = enc.encode(&c).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn frame_order_matters() {
        let (_, enc) = tiny();
        let fwd = clip_from(&[
            vec![1.0, 0.0, 0.0, 0.5, -0.2],
            vec![0.0, 1.0, 0.0, -0.5, 0.3],
            vec![0.0, 0.0, 1.0, 0.1, 0.9],
        ]);
        let mut rev_rows: Vec<Vec<f64>> =
            (0..3).map(|i| fwd.frames.row(2 - i).to_vec()).collect();
        let rev = clip_from(&rev_rows.drain(..).collect::<Vec<_>>());
        let zf = enc.encode(&fwd).unwrap();
        let zr = enc.encode(&rev).unwrap();
        let cos: f64 = zf.data.iter().zip(&zr.data).map(|(a, b)| a * b).sum();
        assert!(cos < 1.0 - 1e-6, "reversal invisible: cos = {cos}");
    }

    #[test]
    fn rejects_wrong_clip_shape() {
        let (_, enc) = tiny();
        assert!(enc.encode(&random_clip(4, 5, 0)).is_err());
        assert!(enc.encode(&random_clip(3, 6, 0)).is_err());
        assert!(enc.encode_all(&[]).is_err());
    }

    #[test]
    fn batch_rows_match_single_encodes() {
        let (_, enc) = tiny();
        let clips: Vec<ClipWindow> = (0..4).map(|s| random_clip(3, 5, 10 + s)).collect();
        let batch = enc.encode_all(&clips).unwrap();
        for (i, c) in clips.iter().enumerate() {
            let single = enc.encode(c).unwrap();
            for j in 0..4 {
                assert!((batch.at(i, j) - single.at(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_encoder_gradients_pass_finite_differences() {
        let (cfg, enc) = tiny();
        let clips: Vec<ClipWindow> = (0..2).map(|s| random_clip(3, 5, 20 + s)).collect();
        let mut rng = seeded_rng(2, "head");
        let head = Tensor::randn(2, cfg.d, 1.0, &mut rng);

        let params: Vec<Tensor> = {
            let mut v: Vec<Tensor> = enc.backbone.params().into_iter().cloned().collect();
            v.push(enc.wq.clone());
            v.push(enc.wk.clone());
            v.push(enc.wv.clone());
            v.extend(enc.ffn.params().into_iter().cloned());
            v.extend(enc.proj.params().into_iter().cloned());
            v
        };
        let nb = enc.backbone.layers.len();
        let nf = enc.ffn.layers.len();
        let enc2 = enc.clone();
        let err = max_grad_check_error(&params, move |tape, vs| {
            let mut i = 0;
            let take_pairs = |n: usize, i: &mut usize| {
                let pairs: Vec<(Var, Var)> =
                    (0..n).map(|k| (vs[*i + 2 * k], vs[*i + 2 * k + 1])).collect();
                *i += 2 * n;
                MlpVars::from_pairs(pairs)
            };
            let backbone = take_pairs(nb, &mut i);
            let (wq, wk, wv) = (vs[i], vs[i + 1], vs[i + 2]);
            i += 3;
            let ffn = take_pairs(nf, &mut i);
            let proj = take_pairs(1, &mut i);
            let vars = EncoderVars {
                backbone,
                wq,
                wk,
                wv,
                ffn,
                proj,
                pos: tape.constant(enc2.pos.clone()),
            };
            let z = enc2.encode_batch(tape, &vars, &clips)?;
            let hc = tape.constant(head.clone());
            let scored = tape.mul(z, hc)?;
            Ok(tape.sum_all(scored))
        })
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (_, enc) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        enc.to_checkpoint().unwrap().save(&path).unwrap();
        let loaded = SkillEncoder::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let c = random_clip(3, 5, 33);
        assert_eq!(enc.encode(&c).unwrap().data, loaded.encode(&c).unwrap().data);
        assert_eq!(loaded.cfg, enc.cfg);
    }

    #[test]
    fn position_codes_change_with_position() {
        let pe = sinusoidal_positions(8, 6);
        assert_eq!(pe.row(0)[0], 0.0);
        assert_eq!(pe.row(0)[1], 1.0);
        for p in 1..8 {
            assert_ne!(pe.row(p), pe.row(0));
        }
        assert!(pe.data.iter().all(|v| v.abs() <= 1.0));
    }
}
