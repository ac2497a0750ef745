use super::model::VarModel;
use super::sampler::SamplerConfig;
use crate::conditioning::{ConditionEmbedding, EmbeddingSource, MeasurementCodebook};
use crate::data::{Image, Mask};
use crate::error::{invalid, Result};
use crate::measurements::{extract_measurements, MeasurementNormalizer, MeasurementVector};
use crate::tokenizer::{TokenPyramid, VqVae};

/// One generated image with the pyramid and measurement token behind it.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub image: Image,
    pub pyramid: TokenPyramid,
    pub f_q: ConditionEmbedding,
}

/// A generation request: target class, raw measurement vector, seed.
#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    pub class: usize,
    pub measurements: MeasurementVector,
    pub source: EmbeddingSource,
    pub seed: u64,
}

/// Trained tokenizer and generator plus the measurement normaliser.
pub struct SynthesisPipeline<'a> {
    pub tokenizer: &'a VqVae,
    pub generator: &'a VarModel,
    pub normalizer: &'a MeasurementNormalizer,
}

impl SynthesisPipeline<'_> {
    /// Measurements extracted from a real image and mask drive generation.
    pub fn intra_request(&self, image: &Image, mask: &Mask, class: usize, seed: u64) -> Result<SynthesisRequest> {
        if mask.area() == 0 {
            return Err(invalid!("intra-class synthesis needs a non-empty lesion mask"));
        }
        Ok(SynthesisRequest {
            class,
            measurements: extract_measurements(image, mask)?,
            source: EmbeddingSource::Extracted,
            seed,
        })
    }

    /// The class-average measurements from the codebook drive generation.
    pub fn inter_request(&self, class: usize, codebook: &MeasurementCodebook, seed: u64) -> Result<SynthesisRequest> {
        Ok(SynthesisRequest {
            class,
            measurements: codebook.query_measurements(class)?,
            source: EmbeddingSource::Codebook,
            seed,
        })
    }

    pub fn synthesize_intra(
        &self,
        image: &Image,
        mask: &Mask,
        class: usize,
        sampler: &SamplerConfig,
    ) -> Result<Synthesis> {
        let req = self.intra_request(image, mask, class, sampler.seed)?;
        Ok(self.synthesize(&[req], sampler)?.remove(0))
    }

    pub fn synthesize_inter(
        &self,
        class: usize,
        codebook: &MeasurementCodebook,
        sampler: &SamplerConfig,
    ) -> Result<Synthesis> {
        let req = self.inter_request(class, codebook, sampler.seed)?;
        Ok(self.synthesize(&[req], sampler)?.remove(0))
    }

    /// Batched generation; each request samples from its own seeded stream,
    /// so results do not depend on how requests are batched.
    pub fn synthesize(&self, requests: &[SynthesisRequest], sampler: &SamplerConfig) -> Result<Vec<Synthesis>> {
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(16) {
            let classes: Vec<usize> = chunk.iter().map(|r| r.class).collect();
            let normed: Vec<Vec<f64>> = chunk
                .iter()
                .map(|r| self.normalizer.normalize(&r.measurements).as_slice().to_vec())
                .collect();
            let seeds: Vec<u64> = chunk.iter().map(|r| r.seed).collect();
            let cond = self.generator.condition_tokens(&classes, &normed)?;
            let pyramids = self.generator.generate(&cond, sampler, &seeds)?;
            let refs: Vec<&TokenPyramid> = pyramids.iter().collect();
            let images = self.tokenizer.detokenize(&refs)?;
            for ((req, (pyr, img)), v) in chunk.iter().zip(pyramids.iter().zip(images)).zip(&normed) {
                out.push(Synthesis {
                    image: img,
                    pyramid: pyr.clone(),
                    f_q: self.generator.measurement_embedding(v, req.source)?,
                });
            }
        }
        Ok(out)
    }
}
