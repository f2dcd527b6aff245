use super::{Model, ModelError, Result};
use crate::codec::special::BOS_ID;
use crate::codec::ModelInput;
use crate::tensor::{Tape, Tensor};

/// Encoder states computed once per sentence and reused by every step.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub input: ModelInput,
    pub h_enc: Tensor,
}

/// Next-token distribution at the last decoder position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub probs: Vec<f64>,
    pub p_gen: Option<f64>,
    /// Restricted head-averaged attention over encoder positions.
    pub attn: Option<Vec<f64>>,
}

impl Model {
    pub fn encode_input(&self, input: ModelInput) -> Result<Encoded> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let h = self.encode(&mut tape, &p, &input)?;
        Ok(Encoded {
            h_enc: tape.value(h).clone(),
            input,
        })
    }

    fn run_decoder(&self, enc: &Encoded, prefix: &[usize], temperature: f64) -> Result<(Tape, super::OutputHeads, super::DecoderOutput)> {
        if !(temperature > 0.0) {
            return Err(ModelError::Config(format!("temperature must be > 0, got {temperature}")));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let h_enc = tape.constant(enc.h_enc.clone());
        let dec = self.decode(&mut tape, &p, prefix, h_enc)?;
        let heads = self.output_heads(&mut tape, &p, &dec, h_enc, &enc.input, temperature)?;
        Ok((tape, heads, dec))
    }

    /// Distribution over the token following `<s> generated...`.
    pub fn step(&self, enc: &Encoded, generated: &[usize], temperature: f64) -> Result<StepInfo> {
        let mut prefix = Vec::with_capacity(generated.len() + 1);
        prefix.push(BOS_ID);
        prefix.extend_from_slice(generated);
        let (tape, heads, _) = self.run_decoder(enc, &prefix, temperature)?;
        let last = prefix.len() - 1;
        let p = tape.value(heads.p);
        let mut probs = p.row_slice(last).to_vec();
        let total: f64 = probs.iter().sum();
        for x in &mut probs {
            *x /= total;
        }
        Ok(StepInfo {
            probs,
            p_gen: heads.p_gen.map(|g| tape.value(g).get(last, 0)),
            attn: heads.attn.map(|a| tape.value(a).row_slice(last).to_vec()),
        })
    }

    /// Teacher-forced distributions for every position of `target`
    /// (which should end with `</s>`).
    pub fn teacher_forced(&self, enc: &Encoded, target: &[usize]) -> Result<Vec<Vec<f64>>> {
        if target.is_empty() {
            return Err(ModelError::EmptyPrefix);
        }
        let mut prefix = vec![BOS_ID];
        prefix.extend_from_slice(&target[..target.len() - 1]);
        let (tape, heads, _) = self.run_decoder(enc, &prefix, 1.0)?;
        let p = tape.value(heads.p);
        Ok((0..prefix.len()).map(|r| p.row_slice(r).to_vec()).collect())
    }

    /// Per-head emotion distributions for a finished sentence.
    pub fn predict_emotions(&self, enc: &Encoded, sentence: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut prefix = vec![BOS_ID];
        if !sentence.is_empty() {
            prefix.extend_from_slice(&sentence[..sentence.len() - 1]);
        }
        let (mut tape, _, dec) = self.run_decoder(enc, &prefix, 1.0)?;
        let p = self.bind(&mut tape, false);
        (0..self.config.k)
            .map(|i| {
                let v = self.emotion_probs(&mut tape, &p, dec.h_dec, i)?;
                Ok(tape.value(v).data().to_vec())
            })
            .collect()
    }
}
