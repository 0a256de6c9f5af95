use serde::{Deserialize, Serialize};

use super::check_shapes;
use crate::error::{Error, Result};

/// Exponential moving average of the parameters:
/// `shadow <- d * shadow + (1 - d) * params`.
///
/// With warmup enabled the decay used at update `t` is
/// `min(decay, (1 + t) / (10 + t))`, so short runs are not dominated by the
/// initial weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub shadow: Vec<Vec<f64>>,
    pub updates: u64,
    pub warmup: bool,
}

impl EmaState {
    /// Shadow starts as a copy of `params`.
    pub fn new(params: &[&[f64]], decay: f64) -> Result<Self> {
        Self::from_shadow(params.iter().map(|p| p.to_vec()).collect(), decay)
    }

    pub fn from_shadow(shadow: Vec<Vec<f64>>, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("EMA decay must lie in [0, 1), got {decay}")));
        }
        Ok(Self {
            decay,
            shadow,
            updates: 0,
            warmup: false,
        })
    }

    pub fn with_warmup(mut self, warmup: bool) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn effective_decay(&self) -> f64 {
        if self.warmup {
            let t = self.updates as f64;
            self.decay.min((1.0 + t) / (10.0 + t))
        } else {
            self.decay
        }
    }

    fn sizes(&self) -> Vec<usize> {
        self.shadow.iter().map(Vec::len).collect()
    }

    pub fn update(&mut self, params: &[&[f64]]) -> Result<()> {
        check_shapes(&self.sizes(), params.iter().map(|p| p.len()))?;
        let d = self.effective_decay();
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (si, pi) in s.iter_mut().zip(p.iter()) {
                *si = d * *si + (1.0 - d) * pi;
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// Exchanges shadow and live values. Calling it twice restores the
    /// original assignment, so evaluation can run on the averaged weights
    /// while training continues on the live ones.
    pub fn swap(&mut self, params: &mut [&mut [f64]]) -> Result<()> {
        check_shapes(&self.sizes(), params.iter().map(|p| p.len()))?;
        for (s, p) in self.shadow.iter_mut().zip(params.iter_mut()) {
            s.as_mut_slice().swap_with_slice(p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_geometrically() {
        let mut ema = EmaState::from_shadow(vec![vec![0.0]], 0.999).unwrap();
        for _ in 0..1000 {
            ema.update(&[&[1.0]]).unwrap();
        }
        let expected = 1.0 - 0.999f64.powi(1000);
        assert!((ema.shadow[0][0] - expected).abs() < 1e-12);
        assert!((ema.shadow[0][0] - 0.632).abs() < 1e-3);
    }

    #[test]
    fn zero_decay_tracks_latest() {
        let mut ema = EmaState::from_shadow(vec![vec![5.0, 5.0]], 0.0).unwrap();
        ema.update(&[&[1.0, 2.0]]).unwrap();
        ema.update(&[&[3.0, -4.0]]).unwrap();
        assert_eq!(ema.shadow[0], vec![3.0, -4.0]);
    }

    #[test]
    fn warmup_decay_ramps() {
        let mut ema = EmaState::from_shadow(vec![vec![0.0]], 0.999).unwrap().with_warmup(true);
        assert!((ema.effective_decay() - 0.1).abs() < 1e-15);
        for _ in 0..100_000 {
            ema.update(&[&[1.0]]).unwrap();
        }
        assert_eq!(ema.effective_decay(), 0.999);
    }

    #[test]
    fn swap_round_trip_and_shapes() {
        let mut ema = EmaState::from_shadow(vec![vec![9.0, 8.0]], 0.5).unwrap();
        let mut live = vec![1.0, 2.0];
        ema.swap(&mut [live.as_mut_slice()]).unwrap();
        assert_eq!(live, vec![9.0, 8.0]);
        ema.swap(&mut [live.as_mut_slice()]).unwrap();
        assert_eq!(live, vec![1.0, 2.0]);
        assert!(ema.update(&[&[1.0]]).is_err());
        assert!(EmaState::from_shadow(vec![], 1.0).is_err());
    }
}
