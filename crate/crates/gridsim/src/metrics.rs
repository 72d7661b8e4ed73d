//! Resilience index and summary statistics over simulation trajectories.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory lengths differ: actual {actual}, nominal {nominal}")]
    LengthMismatch { actual: usize, nominal: usize },
    #[error("nominal trajectory has zero energy; the index is undefined")]
    ZeroNominalEnergy,
    #[error("empty series")]
    EmptySeries,
}

/// An actual trajectory paired with its disturbance-free nominal companion,
/// both as per-step feature vectors in the same order.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub actual: Vec<Vec<f64>>,
    pub nominal: Vec<Vec<f64>>,
}

impl TrajectoryPair {
    pub fn new(actual: Vec<Vec<f64>>, nominal: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        if actual.len() != nominal.len() {
            return Err(MetricsError::LengthMismatch {
                actual: actual.len(),
                nominal: nominal.len(),
            });
        }
        Ok(Self { actual, nominal })
    }
}

/// `R = 1 - sum_k ||x_k - x_k_nom||^2 / sum_k ||x_k_nom||^2`.
///
/// Equals 1 iff the trajectories coincide and is bounded above by 1; a zero
/// nominal denominator is an error.
pub fn resilience_index(pair: &TrajectoryPair) -> Result<f64, MetricsError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, n) in pair.actual.iter().zip(&pair.nominal) {
        debug_assert_eq!(a.len(), n.len(), "feature dimensions must agree");
        for (x, xn) in a.iter().zip(n) {
            num += (x - xn) * (x - xn);
            den += xn * xn;
        }
    }
    if den <= 0.0 {
        return Err(MetricsError::ZeroNominalEnergy);
    }
    Ok(1.0 - num / den)
}

/// Resilience over the trailing `window` steps ending at `end` (inclusive).
/// Early steps use the partial window that exists.
pub fn windowed_resilience(
    actual: &[Vec<f64>],
    nominal: &[Vec<f64>],
    end: usize,
    window: usize,
) -> Result<f64, MetricsError> {
    if actual.len() != nominal.len() {
        return Err(MetricsError::LengthMismatch { actual: actual.len(), nominal: nominal.len() });
    }
    let start = (end + 1).saturating_sub(window);
    let pair = TrajectoryPair {
        actual: actual[start..=end].to_vec(),
        nominal: nominal[start..=end].to_vec(),
    };
    resilience_index(&pair)
}

/// Summary statistics for a named series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Trailing moving average with the requested window.
    pub moving_average: Vec<f64>,
    /// Fraction of samples inside `[band.0, band.1]`.
    pub fraction_in_band: f64,
}

/// Computes min/max/mean, a trailing moving average, and the fraction of
/// time spent inside `band`.
pub fn summarize(series: &[f64], window: usize, band: (f64, f64)) -> Result<SeriesStats, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let window = window.max(1);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut in_band = 0usize;
    for &v in series {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        if v >= band.0 && v <= band.1 {
            in_band += 1;
        }
    }
    Ok(SeriesStats {
        min,
        max,
        mean: sum / series.len() as f64,
        moving_average: moving_average(series, window),
        fraction_in_band: in_band as f64 / series.len() as f64,
    })
}

/// Trailing moving average; early entries average the partial window.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        let n = (i + 1).min(window);
        out.push(acc / n as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_trajectories_score_one() {
        let t = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        let pair = TrajectoryPair::new(t.clone(), t).unwrap();
        assert_eq!(resilience_index(&pair).unwrap(), 1.0);
    }

    #[test]
    fn scalar_hand_case() {
        // nominal = [1, 1], actual = [1, 0] -> R = 1 - 1/2
        let pair = TrajectoryPair::new(vec![vec![1.0], vec![0.0]], vec![vec![1.0], vec![1.0]])
            .unwrap();
        assert_eq!(resilience_index(&pair).unwrap(), 0.5);
    }

    #[test]
    fn zero_nominal_energy_is_error() {
        let pair =
            TrajectoryPair::new(vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        assert!(matches!(resilience_index(&pair), Err(MetricsError::ZeroNominalEnergy)));
    }

    #[test]
    fn windowed_equals_global_at_full_length() {
        let actual = vec![vec![1.0, 0.2], vec![0.8, 0.1], vec![1.1, 0.0]];
        let nominal = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        let global = resilience_index(
            &TrajectoryPair::new(actual.clone(), nominal.clone()).unwrap(),
        )
        .unwrap();
        let windowed = windowed_resilience(&actual, &nominal, 2, 3).unwrap();
        assert!((global - windowed).abs() < 1e-15);
    }

    #[test]
    fn permutation_invariance() {
        let actual = vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, -1.0]];
        let nominal = vec![vec![1.0, 1.0, 3.0], vec![0.5, 1.0, -0.5]];
        let r1 = resilience_index(&TrajectoryPair::new(actual.clone(), nominal.clone()).unwrap())
            .unwrap();
        let perm = |t: &[Vec<f64>]| -> Vec<Vec<f64>> {
            t.iter().map(|v| vec![v[2], v[0], v[1]]).collect()
        };
        let r2 = resilience_index(
            &TrajectoryPair::new(perm(&actual), perm(&nominal)).unwrap(),
        )
        .unwrap();
        assert!((r1 - r2).abs() < 1e-15);
    }

    #[test]
    fn summarize_constant_series() {
        let s = summarize(&[2.0; 10], 4, (0.0, 1.0)).unwrap();
        assert_eq!(s.min, 2.0);
        assert_eq!(s.max, 2.0);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.fraction_in_band, 0.0);
        assert!(s.moving_average.iter().all(|v| *v == 2.0));
    }

    #[test]
    fn band_fraction_hand_count() {
        // 0.96, 0.94, 0.97, 1.2, 0.99 against [0.95, 1.0]: 3 of 5 inside.
        let s = summarize(&[0.96, 0.94, 0.97, 1.2, 0.99], 2, (0.95, 1.0)).unwrap();
        assert!((s.fraction_in_band - 0.6).abs() < 1e-15);
    }

    #[test]
    fn moving_average_window_one_is_identity() {
        let xs = vec![3.0, -1.0, 2.5, 8.0];
        assert_eq!(moving_average(&xs, 1), xs);
    }

    #[test]
    fn empty_series_is_error() {
        assert!(matches!(summarize(&[], 3, (0.0, 1.0)), Err(MetricsError::EmptySeries)));
    }

    proptest! {
        #[test]
        fn resilience_at_most_one_and_monotone(
            base in proptest::collection::vec(0.1f64..2.0, 4),
            dev in proptest::collection::vec(0.0f64..1.0, 4),
            scale in 1.01f64..3.0,
        ) {
            let nominal: Vec<Vec<f64>> = base.iter().map(|v| vec![*v]).collect();
            let actual: Vec<Vec<f64>> =
                base.iter().zip(&dev).map(|(v, d)| vec![v + d]).collect();
            let grown: Vec<Vec<f64>> =
                base.iter().zip(&dev).map(|(v, d)| vec![v + d * scale]).collect();
            let r1 = resilience_index(&TrajectoryPair::new(actual, nominal.clone()).unwrap()).unwrap();
            let r2 = resilience_index(&TrajectoryPair::new(grown, nominal).unwrap()).unwrap();
            prop_assert!(r1 <= 1.0 + 1e-12);
            prop_assert!(r2 <= r1 + 1e-12, "growing deviations must not raise R");
        }
    }
}
