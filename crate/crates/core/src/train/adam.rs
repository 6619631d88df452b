// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Network};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, cfg: &AdamConfig, t: u64, lr: f64, params: &mut [f64], grads: &[f64]) {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        }
    }
}

/// Adam over latent weights (clipped to `[-1, 1]` after every step) and
/// batch norm scale/shift (unclipped).
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    state: Vec<[Moments; 3]>,
}

impl Adam {
    pub fn new(net: &Network, cfg: AdamConfig) -> Self {
        let state = net
            .blocks()
            .iter()
            .map(|b| {
                [
                    Moments::new(b.latent().len()),
                    Moments::new(b.units()),
                    Moments::new(b.units()),
                ]
            })
            .collect();
        Self { cfg, t: 0, state }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.blocks.len() != self.state.len() {
            return Err(Error::Shape("gradient does not match optimizer state".into()));
        }
        self.t += 1;
        for ((block, g), st) in net.blocks_mut().iter_mut().zip(&grads.blocks).zip(&mut self.state) {
            let mut latent = block.latent().clone();
            st[0].update(&self.cfg, self.t, lr, latent.data_mut(), &g.weights);
            for w in latent.data_mut() {
                *w = w.clamp(-1.0, 1.0);
            }
            block.set_latent(latent)?;
            st[1].update(&self.cfg, self.t, lr, &mut block.bn.gamma, &g.gamma);
            st[2].update(&self.cfg, self.t, lr, &mut block.bn.beta, &g.beta);
        }
        debug_assert!(net
            .blocks()
            .iter()
            .all(|b| b.latent().data().iter().all(|w| w.abs() <= 1.0)));
        net.finish_update();
        Ok(())
    }
}
