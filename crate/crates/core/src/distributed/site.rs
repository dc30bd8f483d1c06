//! The site side of the protocol. A site owns its rows and only ever emits
//! encoded frames: gradient sums, or the rows it contributes to the pilot.

use ndarray::{Array1, Array2};

use super::codec::{decode_expect, encode, Frame, Tag};
use crate::data::{CoefVector, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::rng::{sample_without_replacement, seeded};
use crate::smoothing::{smoothed_sum_and_grad, Bandwidth, Kernel};

/// One study held at its own site.
#[derive(Debug, Clone)]
pub struct SiteHandle {
    site_id: usize,
    data: Dataset,
}

/// A site's reply to a model broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    /// Gradient of the summed (not averaged) smoothed loss.
    pub sum: CoefVector,
    pub count: usize,
}

impl SiteHandle {
    pub fn new(site_id: usize, data: Dataset) -> Self {
        Self {
            site_id,
            data: data.relabel(site_id),
        }
    }

    pub fn site_id(&self) -> usize {
        self.site_id
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Local rows, for computations that stay on this site.
    pub(crate) fn data(&self) -> &Dataset {
        &self.data
    }

    /// Answers an encoded model broadcast with an encoded gradient frame.
    pub fn respond_gradient(
        &self,
        model: &[u8],
        h: Bandwidth,
        tau: QuantileLevel,
        kernel: Kernel,
    ) -> Result<Vec<u8>> {
        let frame = decode_expect(model, Tag::Model)?;
        let w = CoefVector::from_slice(&frame.payload)?;
        let msg = local_gradient(self, &w, h, tau, kernel)?;
        Ok(encode(&Frame::new(
            Tag::Grad,
            msg.count as u64,
            msg.sum.to_vec(),
        )))
    }

    /// Encodes `count` rows drawn uniformly without replacement.
    pub fn respond_pilot(&self, count: usize, seed: u64) -> Result<Vec<u8>> {
        if count > self.n() {
            return Err(Error::InvalidParameter(format!(
                "site {} has {} rows, {count} requested",
                self.site_id,
                self.n()
            )));
        }
        let idx = sample_without_replacement(&mut seeded(seed), self.n(), count);
        let p = self.p();
        let mut payload = Vec::with_capacity(count * (p + 1));
        for &i in &idx {
            payload.push(self.data.y()[i]);
            payload.extend(self.data.x().row(i).iter());
        }
        Ok(encode(&Frame::new(Tag::Pilot, count as u64, payload)))
    }
}

/// Gradient sum and row count of one site's smoothed loss at `w`.
pub fn local_gradient(
    site: &SiteHandle,
    w: &CoefVector,
    h: Bandwidth,
    tau: QuantileLevel,
    kernel: Kernel,
) -> Result<GradientMessage> {
    let (_, sum) = smoothed_sum_and_grad(kernel, tau, h, w, &site.data)?;
    Ok(GradientMessage {
        sum,
        count: site.n(),
    })
}

/// Decodes a gradient frame.
pub fn decode_gradient(bytes: &[u8]) -> Result<GradientMessage> {
    let f = decode_expect(bytes, Tag::Grad)?;
    Ok(GradientMessage {
        sum: CoefVector::from_slice(&f.payload)?,
        count: f.meta as usize,
    })
}

/// Decodes a pilot frame into rows labelled with `site_id`.
pub fn decode_pilot(bytes: &[u8], p: usize, site_id: usize) -> Result<Dataset> {
    let f = decode_expect(bytes, Tag::Pilot)?;
    let rows = f.meta as usize;
    if f.payload.len() != rows * (p + 1) {
        return Err(Error::Codec(format!(
            "pilot frame declares {rows} rows of width {} but carries {} reals",
            p + 1,
            f.payload.len()
        )));
    }
    let y = Array1::from_iter(f.payload.chunks_exact(p + 1).map(|r| r[0]));
    let x = Array2::from_shape_fn((rows, p), |(i, j)| f.payload[i * (p + 1) + 1 + j]);
    Dataset::new(x, y, site_id)
}
