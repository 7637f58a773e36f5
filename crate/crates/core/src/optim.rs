//! Limited-memory BFGS with a monotone backtracking line search.
//!
//! Only free coordinates are ever written, so frozen entries of the
//! parameter vector keep their exact bit patterns.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MinimizeConfig {
    pub max_iters: usize,
    /// Stop once the loss fell by less than this fraction over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    /// Number of curvature pairs kept.
    pub history: usize,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// Multiplicative step reduction per backtrack.
    pub shrink: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            max_iters: 200,
            tolerance: 1e-6,
            patience: 20,
            history: 10,
            max_backtracks: 40,
            armijo: 1e-4,
            shrink: 0.5,
        }
    }
}

impl MinimizeConfig {
    pub fn with_max_iters(self, max_iters: usize) -> Self {
        MinimizeConfig { max_iters, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance >= 0.0
            && self.patience >= 1
            && self.history >= 1
            && self.max_backtracks >= 1
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("invalid optimizer settings"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StopReason {
    IterationCap,
    Tolerance,
    ZeroGradient,
    LineSearch,
    NothingFree,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MinimizeReport {
    /// Loss at the start and after every accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

impl MinimizeReport {
    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial loss")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimise `f` over the coordinates of `x` flagged free in `free`.
///
/// `f(x, g)` returns the loss and writes the gradient into `g`. Numerical
/// failures at trial points shrink the step; a failure at the starting point
/// or a non-finite gradient at an accepted point is returned with the
/// iteration index.
pub fn minimize<F>(x: &mut [f64], free: &[bool], config: &MinimizeConfig, mut f: F) -> Result<MinimizeReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    config.validate()?;
    if free.len() != x.len() {
        return Err(Error::invalid("mask length differs from parameter count"));
    }
    let n = x.len();
    let wrap = |iteration: usize, e: Error| Error::Optimizer { iteration, source: Box::new(e) };
    let mask = |g: &mut [f64]| {
        for (gi, fr) in g.iter_mut().zip(free) {
            if !fr {
                *gi = 0.0;
            }
        }
    };

    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g).map_err(|e| wrap(0, e))?;
    if !fx.is_finite() {
        return Err(wrap(0, Error::NonFiniteLoss { term: "total" }));
    }
    mask(&mut g);
    let mut report = MinimizeReport { trace: vec![fx], iterations: 0, evaluations: 1, stop: StopReason::IterationCap };
    if !free.iter().any(|&b| b) {
        report.stop = StopReason::NothingFree;
        return Ok(report);
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history);
    let mut trial = x.to_vec();
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; config.history];

    for iter in 1..=config.max_iters {
        let gnorm = libm::sqrt(dot(&g, &g));
        if gnorm == 0.0 {
            report.stop = StopReason::ZeroGradient;
            return Ok(report);
        }
        let mut fresh_start = pairs.is_empty();
        loop {
            // Two-loop recursion for d = −H·g.
            d.copy_from_slice(&g);
            for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
                let a = rho * dot(s, &d);
                alpha_buf[i] = a;
                d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            }
            if let Some((s, y, _)) = pairs.back() {
                let gamma = dot(s, y) / dot(y, y);
                d.iter_mut().for_each(|di| *di *= gamma);
            } else {
                let scale = 1.0 / gnorm.max(1.0);
                d.iter_mut().for_each(|di| *di *= scale);
            }
            for (i, (s, y, rho)) in pairs.iter().enumerate() {
                let b = rho * dot(y, &d);
                d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha_buf[i] - b) * si);
            }
            d.iter_mut().for_each(|di| *di = -*di);
            mask(&mut d);
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                if fresh_start {
                    report.stop = StopReason::LineSearch;
                    return Ok(report);
                }
                pairs.clear();
                fresh_start = true;
                continue;
            }

            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..config.max_backtracks {
                for i in 0..n {
                    if free[i] {
                        trial[i] = x[i] + step * d[i];
                    }
                }
                report.evaluations += 1;
                match f(&trial, &mut g_new) {
                    Ok(v) if v.is_finite() && v <= fx + config.armijo * step * slope => {
                        accepted = Some(v);
                        break;
                    }
                    Ok(_) => {}
                    Err(e @ Error::NonFiniteGradient { .. }) => return Err(wrap(iter, e)),
                    Err(e) if !e.is_numerical() => return Err(wrap(iter, e)),
                    Err(_) => {}
                }
                step *= config.shrink;
            }
            let Some(v) = accepted else {
                if fresh_start {
                    report.stop = StopReason::LineSearch;
                    return Ok(report);
                }
                pairs.clear();
                fresh_start = true;
                continue;
            };
            mask(&mut g_new);
            let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
            let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) && sy > 0.0 {
                if pairs.len() == config.history {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
            for i in 0..n {
                if free[i] {
                    x[i] = trial[i];
                }
            }
            core::mem::swap(&mut g, &mut g_new);
            fx = v;
            break;
        }
        report.trace.push(fx);
        report.iterations = iter;
        let t = &report.trace;
        if t.len() > config.patience {
            let old = t[t.len() - 1 - config.patience];
            if old - fx <= config.tolerance * old.abs().max(f64::MIN_POSITIVE) {
                report.stop = StopReason::Tolerance;
                return Ok(report);
            }
        }
        if fx == 0.0 {
            report.stop = StopReason::ZeroGradient;
            return Ok(report);
        }
    }
    report.stop = StopReason::IterationCap;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let a = [1.5, -2.0, 0.25, 7.0];
        let mut x = [0.0; 4];
        let rep = minimize(&mut x, &[true; 4], &MinimizeConfig::default(), |x, g| {
            let mut v = 0.0;
            for i in 0..4 {
                g[i] = 2.0 * (x[i] - a[i]);
                v += (x[i] - a[i]).powi(2);
            }
            Ok(v)
        })
        .unwrap();
        assert!(rep.iterations <= 200);
        assert!(x.iter().zip(&a).all(|(x, a)| (x - a).abs() < 1e-6), "{x:?}");
    }

    #[test]
    fn rosenbrock() {
        let mut x = [-1.2, 1.0];
        let cfg = MinimizeConfig { max_iters: 500, tolerance: 0.0, ..Default::default() };
        let rep = minimize(&mut x, &[true; 2], &cfg, |x, g| {
            let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
            g[0] = -2.0 * a - 400.0 * x[0] * b;
            g[1] = 200.0 * b;
            Ok(a * a + 100.0 * b * b)
        })
        .unwrap();
        assert!(rep.final_loss() < 1e-4, "{}", rep.final_loss());
        assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn frozen_coordinates_are_bit_identical() {
        let mut x = [-0.0, 3.0, 1e-300, 2.0];
        let free = [false, true, false, true];
        let before = x;
        minimize(&mut x, &free, &MinimizeConfig::default(), |x, g| {
            g.copy_from_slice(&[2.0 * (x[0] - 1.0), 2.0 * x[1], 2.0 * (x[2] + 1.0), 2.0 * (x[3] - 5.0)]);
            Ok((x[0] - 1.0).powi(2) + x[1] * x[1] + (x[2] + 1.0).powi(2) + (x[3] - 5.0).powi(2))
        })
        .unwrap();
        assert_eq!(x[0].to_bits(), before[0].to_bits());
        assert_eq!(x[2].to_bits(), before[2].to_bits());
        assert!(x[1].abs() < 1e-6 && (x[3] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn failing_start_reports_iteration_zero() {
        let mut x = [1.0];
        let err = minimize(&mut x, &[true], &MinimizeConfig::default(), |_, _| Err(Error::NonFiniteLoss { term: "e_2d" }))
            .unwrap_err();
        assert_eq!(err, Error::Optimizer { iteration: 0, source: Box::new(Error::NonFiniteLoss { term: "e_2d" }) });
    }

    #[test]
    fn trial_failures_shrink_the_step() {
        // Loss undefined for x > 2: the search must back off rather than fail.
        let mut x = [0.0];
        let rep = minimize(&mut x, &[true], &MinimizeConfig::default(), |x, g| {
            if x[0] > 2.0 {
                return Err(Error::BehindCamera { depth: -1.0 });
            }
            g[0] = 2.0 * (x[0] - 1.9);
            Ok((x[0] - 1.9).powi(2))
        })
        .unwrap();
        assert!((x[0] - 1.9).abs() < 1e-6);
        assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
