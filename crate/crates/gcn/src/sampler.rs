use grembed_core::{CsrMatrix, SamplerKind};
use rand::Rng;

use crate::GcnError;

/// Node distribution `q` with an inverse-CDF sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    kind: SamplerKind,
    q: Vec<f64>,
    cdf: Vec<f64>,
}

impl Sampler {
    /// `Importance`: `q(u) = ‖Â(:,u)‖² / Σ_v ‖Â(:,v)‖²`; `Uniform`: `1/n`.
    pub fn new(a_hat: &CsrMatrix, kind: SamplerKind) -> Result<Self, GcnError> {
        let n = a_hat.cols();
        if n == 0 {
            return Err(GcnError::DegenerateSampler);
        }
        let weights = match kind {
            SamplerKind::Importance => a_hat.column_sq_norms(),
            SamplerKind::Uniform => vec![1.0; n],
        };
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(GcnError::DegenerateSampler);
        }
        let q: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &p in &q {
            acc += p;
            cdf.push(acc);
        }
        // pin the top to exactly 1 at the last node with positive mass
        if let Some(last) = q.iter().rposition(|&p| p > 0.0) {
            cdf[last..].iter_mut().for_each(|c| *c = 1.0);
        }
        Ok(Self { kind, q, cdf })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// One node drawn from `q`; never returns a zero-probability node.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u)
    }
}

pub fn build_sampler(a_hat: &CsrMatrix, kind: SamplerKind) -> Result<Sampler, GcnError> {
    Sampler::new(a_hat, kind)
}
