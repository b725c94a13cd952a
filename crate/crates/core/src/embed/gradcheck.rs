//! Finite-difference validation of the negative-sampling training
//! objective, run in f64 through the same step kernel that training uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Algorithm, EmbedConfig};
use super::objective::{ns_step, ns_step_frozen};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::text::TokenSeq;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Word(usize),
    Doc(usize),
}

/// One training example: the mean of `inputs` predicts `target` against
/// fixed `negatives`.
#[derive(Clone, Debug)]
pub struct Example {
    pub inputs: Vec<Input>,
    pub target: usize,
    pub negatives: Vec<usize>,
}

/// Flattened parameters plus a fixed example set; the objective is the summed
/// example loss.
#[derive(Clone, Debug)]
pub struct GradProblem {
    pub dim: usize,
    pub word_in: Vec<f64>,
    pub word_out: Vec<f64>,
    pub docs: Vec<f64>,
    pub examples: Vec<Example>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub grad_norm: f64,
    pub loss: f64,
    pub n_params: usize,
}

impl GradProblem {
    fn input_row(&self, input: Input) -> &[f64] {
        let d = self.dim;
        match input {
            Input::Word(i) => &self.word_in[i * d..(i + 1) * d],
            Input::Doc(i) => &self.docs[i * d..(i + 1) * d],
        }
    }

    fn mean_input(&self, ex: &Example) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        let inv = 1.0 / ex.inputs.len() as f64;
        for &inp in &ex.inputs {
            for (hv, &x) in h.iter_mut().zip(self.input_row(inp)) {
                *hv += inv * x;
            }
        }
        h
    }

    pub fn loss(&self) -> f64 {
        let mut scratch = vec![0.0; self.dim];
        self.examples
            .iter()
            .map(|ex| {
                let h = self.mean_input(ex);
                ns_step_frozen(&h, &self.word_out, self.dim, ex.target, &ex.negatives, 0.0, &mut scratch)
            })
            .sum()
    }

    /// Analytic gradient laid out as `[word_in | word_out | docs]`.
    pub fn gradient(&self) -> Vec<f64> {
        let d = self.dim;
        let (n_in, n_out) = (self.word_in.len(), self.word_out.len());
        let mut grad = vec![0.0; n_in + n_out + self.docs.len()];
        let mut neu1e = vec![0.0; d];
        for ex in &self.examples {
            let h = self.mean_input(ex);
            // unit step: the output rows move by exactly -∂L/∂o
            let mut out = self.word_out.clone();
            ns_step(&h, &mut out, d, ex.target, &ex.negatives, 1.0, &mut neu1e);
            for (g, (before, after)) in grad[n_in..n_in + n_out]
                .iter_mut()
                .zip(self.word_out.iter().zip(&out))
            {
                *g += before - after;
            }
            let inv = 1.0 / ex.inputs.len() as f64;
            for &inp in &ex.inputs {
                let base = match inp {
                    Input::Word(i) => i * d,
                    Input::Doc(i) => n_in + n_out + i * d,
                };
                for k in 0..d {
                    grad[base + k] -= inv * neu1e[k];
                }
            }
        }
        grad
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (n_in, n_out) = (self.word_in.len(), self.word_out.len());
        if idx < n_in {
            &mut self.word_in[idx]
        } else if idx < n_in + n_out {
            &mut self.word_out[idx - n_in]
        } else {
            &mut self.docs[idx - n_in - n_out]
        }
    }

    pub fn check(&self) -> GradCheckReport {
        let analytic = self.gradient();
        let mut probe = self.clone();
        let mut max_rel = 0.0f64;
        for (idx, &a) in analytic.iter().enumerate() {
            let orig = *probe.param_mut(idx);
            *probe.param_mut(idx) = orig + FD_STEP;
            let up = probe.loss();
            *probe.param_mut(idx) = orig - FD_STEP;
            let down = probe.loss();
            *probe.param_mut(idx) = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        GradCheckReport {
            max_rel_error: max_rel,
            grad_norm: analytic.iter().map(|g| g * g).sum::<f64>().sqrt(),
            loss: self.loss(),
            n_params: analytic.len(),
        }
    }
}

/// Build a randomly initialized problem from a tiny corpus, with examples
/// laid out exactly as training would visit them, and compare the analytic
/// gradient with central differences.
pub fn gradient_check(config: &EmbedConfig, docs: &[(Vec<String>, TokenSeq)]) -> Result<GradCheckReport> {
    Ok(build_problem(config, docs)?.check())
}

pub fn build_problem(config: &EmbedConfig, docs: &[(Vec<String>, TokenSeq)]) -> Result<GradProblem> {
    config.validate()?;
    if config.dim > 8 {
        return Err(Error::Config(format!("gradient check needs dim <= 8, got {}", config.dim)));
    }
    let vocab = Vocab::build(docs.iter().map(|(_, t)| t), config.min_count)?;
    if vocab.len() > 20 {
        return Err(Error::Config(format!(
            "gradient check needs at most 20 tokens, got {}",
            vocab.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tags: Vec<&str> = Vec::new();
    let mut examples = Vec::new();
    for (doc_tags, tokens) in docs {
        let words = vocab.lookup(tokens);
        let tag_ids: Vec<usize> = doc_tags
            .iter()
            .map(|t| match tags.iter().position(|x| x == t) {
                Some(i) => i,
                None => {
                    tags.push(t);
                    tags.len() - 1
                }
            })
            .collect();
        for (pos, &target) in words.iter().enumerate() {
            // Distinct negatives: the kernel updates a repeated row in place,
            // which would make the summed step differ from the true gradient.
            let mut negatives = || {
                let mut negs: Vec<usize> = Vec::new();
                for _ in 0..config.negative * 20 {
                    if negs.len() == config.negative {
                        break;
                    }
                    let n = vocab.sample_negative(&mut rng);
                    if n != target && !negs.contains(&n) {
                        negs.push(n);
                    }
                }
                negs
            };
            match config.algorithm {
                Algorithm::PvDbow => {
                    for &t in &tag_ids {
                        examples.push(Example {
                            inputs: vec![Input::Doc(t)],
                            target,
                            negatives: negatives(),
                        });
                    }
                }
                Algorithm::PvDm => {
                    let lo = pos.saturating_sub(config.window);
                    let hi = (pos + config.window + 1).min(words.len());
                    let mut inputs: Vec<Input> =
                        (lo..hi).filter(|&c| c != pos).map(|c| Input::Word(words[c])).collect();
                    inputs.extend(tag_ids.iter().map(|&t| Input::Doc(t)));
                    examples.push(Example {
                        inputs,
                        target,
                        negatives: negatives(),
                    });
                }
            }
        }
    }
    let dim = config.dim;
    let mut init = |n: usize| -> Vec<f64> { (0..n * dim).map(|_| rng.gen_range(-0.5..0.5)).collect() };
    Ok(GradProblem {
        dim,
        word_in: init(vocab.len()),
        word_out: init(vocab.len()),
        docs: init(tags.len()),
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocLabelScheme;

    fn corpus() -> Vec<(Vec<String>, TokenSeq)> {
        vec![
            (vec!["u1".into(), "Hate".into()], ["a", "b", "c", "a"].into_iter().collect()),
            (vec!["u2".into(), "Counter".into()], ["d", "e", "b"].into_iter().collect()),
            (vec!["u1".into(), "Hate".into()], ["c", "a", "f"].into_iter().collect()),
        ]
    }

    fn config(algorithm: Algorithm) -> EmbedConfig {
        EmbedConfig {
            dim: 4,
            window: 2,
            min_count: 1,
            algorithm,
            scheme: DocLabelScheme::AuthorGroup,
            negative: 3,
            seed: 11,
            ..EmbedConfig::default()
        }
    }

    #[test]
    fn dbow_gradient_matches_finite_differences() {
        let r = gradient_check(&config(Algorithm::PvDbow), &corpus()).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert!(r.grad_norm > 1e-3);
    }

    #[test]
    fn dm_gradient_matches_finite_differences() {
        let r = gradient_check(&config(Algorithm::PvDm), &corpus()).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn saturated_objective_has_vanishing_gradient() {
        // h·o_target = +40, h·o_neg = -40
        let problem = GradProblem {
            dim: 2,
            word_in: vec![0.0; 4],
            word_out: vec![4.0, 4.0, -4.0, -4.0],
            docs: vec![10.0, 0.0],
            examples: vec![Example {
                inputs: vec![Input::Doc(0)],
                target: 0,
                negatives: vec![1],
            }],
        };
        let r = problem.check();
        assert!(r.grad_norm < 1e-6, "{r:?}");
        assert!(r.loss < 1e-12);
    }

    #[test]
    fn size_limits() {
        let big = EmbedConfig { dim: 9, ..config(Algorithm::PvDbow) };
        assert!(matches!(gradient_check(&big, &corpus()), Err(Error::Config(_))));
    }
}
