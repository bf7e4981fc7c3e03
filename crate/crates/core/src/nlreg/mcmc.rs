//! Adaptive random-walk Metropolis on (log h, log σ_ε).

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Hyperparameters, VarianceObservations};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Kept draws per chain.
    pub draws: usize,
    /// Iterations between step-size updates during burn-in.
    pub batch: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            burn_in: 1000,
            draws: 3000,
            batch: 50,
        }
    }
}

impl McmcConfig {
    pub(super) fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws < 4 || self.batch == 0 {
            return Err(Error::invalid(
                "MCMC needs at least one chain, 4 kept draws and a positive batch size",
            ));
        }
        Ok(())
    }
}

const TARGET_LOW: f64 = 0.3;
const TARGET_HIGH: f64 = 0.5;

pub(super) struct Target<'a> {
    obs: &'a VarianceObservations,
    hyper: Hyperparameters,
    nugget2: f64,
}

impl<'a> Target<'a> {
    pub(super) fn new(obs: &'a VarianceObservations, hyper: Hyperparameters, nugget: f64) -> Self {
        Self {
            obs,
            hyper,
            nugget2: nugget * nugget,
        }
    }

    fn rss(&self, h: f64) -> f64 {
        self.obs
            .n
            .iter()
            .zip(&self.obs.y)
            .map(|(&n, &y)| {
                let r = y - self.obs.sigma_phi * n / (n + h);
                r * r
            })
            .sum()
    }

    /// Log posterior density in (log h, log σ_ε), Jacobian included.
    fn log_density(&self, x: Vector2<f64>) -> f64 {
        let (h, s) = (x[0].exp(), x[1].exp());
        if !(h > 0.0 && h.is_finite() && s > 0.0 && s.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let hp = &self.hyper;
        let var = s * s + self.nugget2;
        let q = self.obs.len() as f64;
        let loglik = -0.5 * q * var.ln() - self.rss(h) / (2.0 * var);
        let dh = h - hp.h_mean;
        let log_h = -dh * dh / (2.0 * hp.h_variance);
        let z = (s - hp.sigma_location) / hp.sigma_scale;
        let log_s = -0.5 * (hp.sigma_df + 1.0) * (z * z / hp.sigma_df).ln_1p();
        loglik + log_h + log_s + x[0] + x[1]
    }

    /// Least-squares h on a log grid refined by golden section, with the
    /// matching residual scale.
    pub(super) fn least_squares_start(&self) -> Vector2<f64> {
        let n_min = self.obs.n.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let lo = (1e-6 * n_min).ln();
        let hi = (1e4 * self.obs.n_max().max(self.hyper.h_mean)).ln();
        let steps = 400;
        let at = |i: usize| lo + (hi - lo) * i as f64 / steps as f64;
        let best = (0..=steps)
            .min_by(|&a, &b| self.rss(at(a).exp()).total_cmp(&self.rss(at(b).exp())))
            .unwrap_or(0);
        let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(steps)));
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - ratio * (b - a);
            let d = a + ratio * (b - a);
            if self.rss(c.exp()) <= self.rss(d.exp()) {
                b = d;
            } else {
                a = c;
            }
        }
        let u = 0.5 * (a + b);
        let rss = self.rss(u.exp());
        let q = self.obs.len() as f64;
        let s = (rss / q).sqrt().max(self.nugget2.sqrt()).max(1e-300);
        Vector2::new(u, s.ln())
    }
}

pub(super) struct ChainRun {
    pub h: Vec<f64>,
    pub sigma: Vec<f64>,
    pub acceptance: f64,
}

fn proposal_factor(cov: &Matrix2<f64>) -> Matrix2<f64> {
    match cov.cholesky() {
        Some(c) => c.l(),
        None => Matrix2::from_diagonal(&Vector2::new(
            cov[(0, 0)].max(1e-12).sqrt(),
            cov[(1, 1)].max(1e-12).sqrt(),
        )),
    }
}

pub(super) fn run_chain(
    target: &Target<'_>,
    start: Vector2<f64>,
    config: &McmcConfig,
    seed: u64,
    chain: usize,
) -> ChainRun {
    let mut rng = rng::derived_stream(seed, "nlreg-chain", chain as u64);
    let jitter = Vector2::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample(StandardNormal),
    );
    let mut x = start + jitter * 0.2;
    let mut lp = target.log_density(x);
    if !lp.is_finite() {
        x = start;
        lp = target.log_density(x);
    }

    let mut base = Matrix2::from_diagonal(&Vector2::new(0.1, 0.1));
    let mut log_scale = 0.0_f64;
    let mut factor = proposal_factor(&base);
    let mut history: Vec<Vector2<f64>> = Vec::with_capacity(config.burn_in);
    let mut batch_accepted = 0;
    let mut batches = 0usize;

    let step = |x: &mut Vector2<f64>,
                lp: &mut f64,
                factor: &Matrix2<f64>,
                rng: &mut rng::StreamRng|
     -> bool {
        let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let y = *x + factor * z;
        let lp_new = target.log_density(y);
        let u: f64 = rng.random();
        if lp_new.is_finite() && u.ln() < lp_new - *lp {
            *x = y;
            *lp = lp_new;
            true
        } else {
            false
        }
    };

    for it in 0..config.burn_in {
        if step(&mut x, &mut lp, &factor, &mut rng) {
            batch_accepted += 1;
        }
        history.push(x);
        if (it + 1) % config.batch == 0 {
            batches += 1;
            let rate = batch_accepted as f64 / config.batch as f64;
            let delta = (1.0 / (batches as f64).sqrt()).min(0.5);
            if rate < TARGET_LOW {
                log_scale -= delta;
            } else if rate > TARGET_HIGH {
                log_scale += delta;
            }
            batch_accepted = 0;
            if history.len() >= 200 {
                let tail = &history[history.len() / 2..];
                let m = tail.iter().fold(Vector2::zeros(), |a, v| a + v) / tail.len() as f64;
                let c = tail
                    .iter()
                    .fold(Matrix2::zeros(), |a, v| a + (v - m) * (v - m).transpose())
                    / (tail.len() - 1) as f64;
                base = c * (2.38 * 2.38 / 2.0) + Matrix2::identity() * 1e-10;
            }
            factor = proposal_factor(&(base * (2.0 * log_scale).exp()));
        }
    }

    let mut h = Vec::with_capacity(config.draws);
    let mut sigma = Vec::with_capacity(config.draws);
    let mut accepted = 0;
    for _ in 0..config.draws {
        if step(&mut x, &mut lp, &factor, &mut rng) {
            accepted += 1;
        }
        h.push(x[0].exp());
        sigma.push(x[1].exp());
    }
    ChainRun {
        h,
        sigma,
        acceptance: accepted as f64 / config.draws as f64,
    }
}
