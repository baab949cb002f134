//! Linear maximum-margin classifier trained by dual coordinate descent on the
//! hinge loss. Features are standardized; the bias is an extra constant feature.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use super::StentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmParams {
    /// Misclassification cost.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop when the projected-gradient spread of an epoch falls below this.
    pub tolerance: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 1000,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearSvm {
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &SvmParams, seed: u64) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        for xi in x {
            for (m, v) in mean.iter_mut().zip(xi) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for xi in x {
            for ((s, v), m) in scale.iter_mut().zip(xi).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        // augmented samples: standardized features plus a constant 1
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| {
                let mut v = standardize(xi, &mean, &scale);
                v.push(1.0);
                v
            })
            .collect();
        let sign: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let q: Vec<f64> = z.iter().map(|v| dot(v, v)).collect();
        let mut alpha = vec![0.0; n];
        let mut w = vec![0.0; d + 1];
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..params.max_epochs {
            order.shuffle(&mut rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let g = sign[i] * dot(&w, &z[i]) - 1.0;
                let pg = if alpha[i] <= 0.0 {
                    g.min(0.0)
                } else if alpha[i] >= params.c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 && q[i] > 0.0 {
                    let old = alpha[i];
                    alpha[i] = (old - g / q[i]).clamp(0.0, params.c);
                    let step = (alpha[i] - old) * sign[i];
                    for (wj, zj) in w.iter_mut().zip(&z[i]) {
                        *wj += step * zj;
                    }
                }
            }
            if pg_max - pg_min < params.tolerance {
                break;
            }
        }
        let bias = w.pop().unwrap_or(0.0);
        Self { mean, scale, weights: w, bias }
    }

    /// Signed margin; positive means the positive class.
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, &standardize(x, &self.mean, &self.scale)) + self.bias
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u32(self.weights.len() as u32);
        for v in self.mean.iter().chain(&self.scale).chain(&self.weights) {
            w.f64(*v);
        }
        w.f64(self.bias);
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self, StentError> {
        let d = r.u32()? as usize;
        if r.remaining() < (3 * d + 1) * 8 {
            return Err(StentError::ModelFormat(format!("svm blob too short for {d} features")));
        }
        let mut read = |k: usize| (0..k).map(|_| r.f64()).collect::<Result<Vec<f64>, _>>();
        let mean = read(d)?;
        let scale = read(d)?;
        let weights = read(d)?;
        let bias = r.f64()?;
        Ok(Self { mean, scale, weights, bias })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..30 {
            let t = i as f64 / 3.0;
            x.push(vec![t, 10.0 - t + 3.0]);
            y.push(true);
            x.push(vec![t, 10.0 - t - 3.0]);
            y.push(false);
        }
        let m = LinearSvm::fit(&x, &y, &SvmParams { c: 100.0, ..Default::default() }, 1);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.decision(xi) > 0.0, yi, "{xi:?}");
        }
    }

    #[test]
    fn constant_feature_is_harmless() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 5.0]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let m = LinearSvm::fit(&x, &y, &SvmParams::default(), 0);
        assert!(m.weights.iter().all(|w| w.is_finite()));
        assert!(m.decision(&[9.0, 5.0]) > 0.0);
        assert!(m.decision(&[0.0, 5.0]) < 0.0);
    }
}
