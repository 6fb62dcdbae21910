use serde::{Deserialize, Serialize};

use super::TrainingSample;
use crate::traffic::LinkObservation;

/// Fixed feature scaling: speeds by `speed_kmh`, densities by `density`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub speed_kmh: f64,
    pub density: f64,
}

impl Normalizer {
    pub fn features(&self, o: &LinkObservation) -> [f64; 3] {
        [
            o.mean_speed / self.speed_kmh,
            o.density / self.density,
            o.in_speed / self.speed_kmh,
        ]
    }

    pub fn speed(&self, kmh: f64) -> f64 {
        kmh / self.speed_kmh
    }

    pub fn denormalize_speed(&self, normalized: f64) -> f64 {
        normalized * self.speed_kmh
    }
}

/// Sliding windows over a per-second observation series. A window qualifies
/// when its `window + 1` observations lie on one link at consecutive seconds;
/// the last one supplies the target speed.
pub fn windows(series: &[LinkObservation], window: usize, norm: &Normalizer) -> Vec<TrainingSample> {
    if window == 0 || series.len() <= window {
        return Vec::new();
    }
    series
        .windows(window + 1)
        .filter(|w| {
            w.windows(2)
                .all(|p| p[1].link == p[0].link && p[1].time - p[0].time == 1.0)
        })
        .map(|w| TrainingSample {
            features: w[..window].iter().map(|o| norm.features(o)).collect(),
            target: norm.speed(w[window].mean_speed),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(time: f64, link: usize, speed: f64) -> LinkObservation {
        LinkObservation {
            time,
            link,
            mean_speed: speed,
            density: 10.0,
            in_speed: 40.0,
        }
    }

    #[test]
    fn windows_respect_link_and_time_continuity() {
        let norm = Normalizer {
            speed_kmh: 80.0,
            density: 133.0,
        };
        let series = vec![
            obs(0.0, 0, 10.0),
            obs(1.0, 0, 20.0),
            obs(2.0, 0, 30.0),
            obs(3.0, 0, 40.0),
            obs(4.0, 1, 50.0),
            obs(5.0, 1, 60.0),
            obs(7.0, 1, 70.0),
        ];
        let w = windows(&series, 2, &norm);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].target, 30.0 / 80.0);
        assert_eq!(w[1].features[0][0], 20.0 / 80.0);
        assert_eq!(w[1].features[0][2], 0.5);
        assert!(windows(&series[..2], 2, &norm).is_empty());
    }
}
