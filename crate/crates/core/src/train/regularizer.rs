// SPDX-License-Identifier: Apache-2.0

use super::DirectReg;
use crate::model::{ExtraBnGrad, Network, TrainTrace};
use crate::{Error, Result};

/// `max(0, b - t)`.
pub fn hinge(t: f64, b: f64) -> f64 {
    (b - t).max(0.0)
}

#[derive(Clone, Debug)]
pub struct DirectRegOutput {
    /// Unweighted penalty.
    pub penalty: f64,
    /// `lambda`-scaled gradient contributions, one entry per block (the
    /// output layer gets `None`).
    pub extra: Vec<Option<ExtraBnGrad>>,
}

/// Hinge penalty on a differentiable tolerance surrogate.
///
/// With batch statistics the distance of a pre-activation to its folded
/// threshold is `h - tau = sigma * (xhat + beta / gamma)`. The surrogate is
/// `t = sigma * |xhat + beta / gamma| / Z` (sigma treated as a constant,
/// `Z` the input range for the first layer and 1 elsewhere). The penalty is
/// the mean of `max(0, b - t)` over positions, then over all hidden neurons,
/// then over the batch. Optional layer weights scale each layer's share.
pub fn direct_reg_penalty(net: &Network, trace: &TrainTrace, reg: &DirectReg) -> Result<DirectRegOutput> {
    let (b, lambda) = (reg.b, reg.lambda);
    let blocks = net.blocks();
    let hidden = blocks.len() - 1;
    let batch = trace.batch();
    let neurons: usize = net.hidden().iter().map(|bl| bl.units()).sum();
    let mut penalty = 0.0;
    let mut extra = Vec::with_capacity(blocks.len());
    for (l, block) in blocks.iter().enumerate() {
        if l == hidden {
            extra.push(None);
            continue;
        }
        let xhat = trace.xhat(l);
        let std = trace.batch_std(l);
        let units = block.units();
        let pos = block.positions();
        if xhat.len() != batch * units * pos || std.len() != units {
            return Err(Error::StaleTrace(format!("block {l} cache does not match the network")));
        }
        let zl = if l == 0 { net.z() as f64 } else { 1.0 };
        // every element carries weight 1 / (B N P) in the penalty
        let w = reg.layer_weight(l) / (batch * neurons * pos) as f64;
        let mut e = ExtraBnGrad {
            dxhat: vec![0.0; xhat.len()],
            dgamma: vec![0.0; units],
            dbeta: vec![0.0; units],
        };
        for c in 0..units {
            let gamma = block.bn.gamma[c];
            let beta = block.bn.beta[c];
            if gamma == 0.0 {
                // constant output: no finite threshold and nothing to push
                continue;
            }
            let sigma = std[c];
            let off = beta / gamma;
            for s in 0..batch {
                for p in 0..pos {
                    let k = (s * units + c) * pos + p;
                    let zv = xhat[k] + off;
                    let t = sigma * zv.abs() / zl;
                    let loss = hinge(t, b);
                    if loss > 0.0 {
                        penalty += w * loss;
                        // d penalty / d z
                        let dz = -w * sigma * zv.signum() / zl * lambda;
                        e.dxhat[k] = dz;
                        e.dbeta[c] += dz / gamma;
                        e.dgamma[c] -= dz * beta / (gamma * gamma);
                    }
                }
            }
        }
        extra.push(Some(e));
    }
    Ok(DirectRegOutput { penalty, extra })
}
