//! Link quality metric: airtime cost of a test frame plus the AP's advertised
//! average load. Lower is better.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::{Band, Channel, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AirtimeParams {
    /// Channel access and protocol overhead O, microseconds.
    pub overhead_us: f64,
    /// Test frame size B_t, bits.
    pub test_frame_bits: f64,
    /// Weight W applied to the advertised load, microseconds. `None` uses the
    /// test-frame transmission time B_t/r of the link being scored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_weight_us: Option<f64>,
}

impl Default for AirtimeParams {
    fn default() -> Self {
        AirtimeParams { overhead_us: 100.0, test_frame_bits: 8192.0, load_weight_us: None }
    }
}

impl AirtimeParams {
    pub fn is_valid(&self) -> bool {
        self.overhead_us >= 0.0
            && self.test_frame_bits > 0.0
            && self.overhead_us.is_finite()
            && self.test_frame_bits.is_finite()
            && self.load_weight_us.is_none_or(|w| w >= 0.0 && w.is_finite())
    }

    pub fn load_weight(&self, rate_bps: f64) -> f64 {
        self.load_weight_us.unwrap_or(self.test_frame_bits / rate_bps * 1e6)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("invalid link observation: frame error rate {0} must be < 1")]
    FrameErrorRate(f64),
    #[error("invalid link observation: rate {0} bps must be > 0")]
    Rate(f64),
    #[error("load sample {0} outside [0, 1]")]
    Sample(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkObservation {
    pub ap: NodeId,
    pub band: Band,
    pub channel: Channel,
    pub rssi_dbm: f64,
    pub frame_error_rate: f64,
    pub rate_bps: f64,
    pub advertised_load: f64,
}

/// Airtime cost `(O + B_t/r) / (1 - e_f)` in microseconds.
pub fn airtime(p: &AirtimeParams, obs: &LinkObservation) -> Result<f64, MetricError> {
    let ef = obs.frame_error_rate;
    if !(ef < 1.0) || ef < 0.0 {
        return Err(MetricError::FrameErrorRate(ef));
    }
    if !(obs.rate_bps > 0.0) {
        return Err(MetricError::Rate(obs.rate_bps));
    }
    Ok((p.overhead_us + p.test_frame_bits / obs.rate_bps * 1e6) / (1.0 - ef))
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LinkQualityMetric(pub f64);

impl LinkQualityMetric {
    pub fn micros(self) -> f64 {
        self.0
    }
}

pub fn link_quality(p: &AirtimeParams, obs: &LinkObservation) -> Result<LinkQualityMetric, MetricError> {
    let base = airtime(p, obs)?;
    Ok(LinkQualityMetric(base + obs.advertised_load * p.load_weight(obs.rate_bps)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadParams {
    pub ewma_alpha: f64,
    pub sample_period_s: f64,
}

impl Default for LoadParams {
    fn default() -> Self {
        LoadParams { ewma_alpha: 0.25, sample_period_s: 0.1 }
    }
}

const LOAD_CEILING: f64 = 1.0 - 1e-6;

/// Exponentially weighted average of an AP's busy fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadTracker {
    pub utilization: f64,
    pub ewma_alpha: f64,
}

impl LoadTracker {
    pub fn new(ewma_alpha: f64) -> Self {
        LoadTracker { utilization: 0.0, ewma_alpha }
    }
}

pub fn update_load(t: LoadTracker, busy_fraction_sample: f64) -> Result<LoadTracker, MetricError> {
    if !(0.0..=1.0).contains(&busy_fraction_sample) {
        return Err(MetricError::Sample(busy_fraction_sample));
    }
    let a = t.ewma_alpha;
    let rho = ((1.0 - a) * t.utilization + a * busy_fraction_sample).min(LOAD_CEILING);
    Ok(LoadTracker { utilization: rho, ..t })
}

/// A scored AP as seen from a scanning node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredAp {
    pub ap: NodeId,
    pub band: Band,
    pub channel: Channel,
    pub rssi_dbm: f64,
    pub metric: LinkQualityMetric,
}

/// Total order used to rank candidates: metric ascending, then stronger
/// RSSI, then lower node id.
pub fn candidate_order(a: &ScoredAp, b: &ScoredAp) -> Ordering {
    a.metric
        .0
        .total_cmp(&b.metric.0)
        .then_with(|| b.rssi_dbm.total_cmp(&a.rssi_dbm))
        .then_with(|| a.ap.cmp(&b.ap))
        .then_with(|| a.channel.cmp(&b.channel))
}

/// Sorts best-first.
pub fn rank_candidates(mut list: Vec<ScoredAp>) -> Vec<ScoredAp> {
    list.sort_by(candidate_order);
    list
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(rate: f64, ef: f64, load: f64) -> LinkObservation {
        LinkObservation {
            ap: NodeId(1),
            band: Band::Band24,
            channel: Channel::first(Band::Band24),
            rssi_dbm: -50.0,
            frame_error_rate: ef,
            rate_bps: rate,
            advertised_load: load,
        }
    }

    fn scored(ap: u32, m: f64, rssi: f64) -> ScoredAp {
        ScoredAp {
            ap: NodeId(ap),
            band: Band::Band24,
            channel: Channel::first(Band::Band24),
            rssi_dbm: rssi,
            metric: LinkQualityMetric(m),
        }
    }

    #[test]
    fn airtime_examples() {
        let p0 = AirtimeParams { overhead_us: 0.0, ..Default::default() };
        assert!((airtime(&p0, &obs(8.192e6, 0.0, 0.0)).unwrap() - 1000.0).abs() < 1e-9);
        let p = AirtimeParams::default();
        // 100 + 8192 / 11 = 844.7272...
        let a = airtime(&p, &obs(11e6, 0.0, 0.0)).unwrap();
        assert!((a - (100.0 + 8192.0 / 11.0)).abs() < 1e-9);
        assert!((a - 844.727).abs() < 1e-3);
        let b = airtime(&p, &obs(11e6, 0.5, 0.0)).unwrap();
        assert!((b - 1689.455).abs() < 1e-3);
    }

    #[test]
    fn airtime_rejects_bad_observations() {
        let p = AirtimeParams::default();
        assert_eq!(airtime(&p, &obs(11e6, 1.0, 0.0)), Err(MetricError::FrameErrorRate(1.0)));
        assert_eq!(airtime(&p, &obs(0.0, 0.0, 0.0)), Err(MetricError::Rate(0.0)));
        assert!(link_quality(&p, &obs(-1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn update_load_examples() {
        let t = LoadTracker { utilization: 0.7, ewma_alpha: 1.0 };
        assert_eq!(update_load(t, 0.3).unwrap().utilization, 0.3);
        let t = LoadTracker { utilization: 0.0, ewma_alpha: 0.5 };
        assert_eq!(update_load(t, 1.0).unwrap().utilization, 0.5);
        let t = LoadTracker { utilization: 0.5, ewma_alpha: 0.5 };
        assert_eq!(update_load(t, 0.0).unwrap().utilization, 0.25);
        assert_eq!(update_load(t, 1.5), Err(MetricError::Sample(1.5)));
        assert!(update_load(t, -0.1).is_err());
    }

    #[test]
    fn link_quality_examples() {
        let p = AirtimeParams::default();
        let zero = link_quality(&p, &obs(11e6, 0.0, 0.0)).unwrap();
        assert_eq!(zero.0, airtime(&p, &obs(11e6, 0.0, 0.0)).unwrap());
        // W defaults to B_t/r = 744.727 us; 844.727 + 0.5 * 744.727 = 1217.09
        let half = link_quality(&p, &obs(11e6, 0.0, 0.5)).unwrap();
        assert!((half.0 - 1217.1).abs() < 0.05, "{}", half.0);
        let more = link_quality(&p, &obs(11e6, 0.0, 0.6)).unwrap();
        assert!(half < more);
    }

    #[test]
    fn ranking_examples() {
        let r = rank_candidates(vec![scored(1, 900.0, -50.0), scored(2, 800.0, -50.0), scored(3, 850.0, -50.0)]);
        assert_eq!(r.iter().map(|c| c.metric.0).collect::<Vec<_>>(), vec![800.0, 850.0, 900.0]);
        let r = rank_candidates(vec![scored(4, 1.0, -70.0)]);
        assert_eq!(r[0].ap, NodeId(4));
        let r = rank_candidates(vec![scored(1, 900.0, -60.0), scored(2, 900.0, -50.0)]);
        assert_eq!(r[0].rssi_dbm, -50.0);
        let r = rank_candidates(vec![scored(7, 900.0, -50.0), scored(3, 900.0, -50.0)]);
        assert_eq!(r[0].ap, NodeId(3));
    }

    proptest! {
        #[test]
        fn airtime_monotone(ef1 in 0.0f64..0.99, ef2 in 0.0f64..0.99, r1 in 1e5f64..1e8, r2 in 1e5f64..1e8) {
            let p = AirtimeParams::default();
            if ef1 < ef2 {
                prop_assert!(airtime(&p, &obs(11e6, ef1, 0.0)).unwrap() < airtime(&p, &obs(11e6, ef2, 0.0)).unwrap());
            }
            if r1 < r2 {
                prop_assert!(airtime(&p, &obs(r1, 0.1, 0.0)).unwrap() > airtime(&p, &obs(r2, 0.1, 0.0)).unwrap());
            }
        }

        #[test]
        fn link_quality_increases_with_load(l1 in 0.0f64..0.999, l2 in 0.0f64..0.999) {
            prop_assume!(l1 < l2);
            let p = AirtimeParams::default();
            prop_assert!(link_quality(&p, &obs(11e6, 0.0, l1)).unwrap() < link_quality(&p, &obs(11e6, 0.0, l2)).unwrap());
        }

        #[test]
        fn load_stays_in_unit_interval(alpha in 0.01f64..=1.0, samples in prop::collection::vec(0.0f64..=1.0, 0..60)) {
            let mut t = LoadTracker::new(alpha);
            for s in samples {
                t = update_load(t, s).unwrap();
                prop_assert!((0.0..1.0).contains(&t.utilization));
            }
        }

        #[test]
        fn ranking_is_sorted_permutation(items in prop::collection::vec((0u32..20, 500.0f64..3000.0, -90.0f64..-30.0), 0..12)) {
            let input: Vec<ScoredAp> = items.iter().map(|&(a, m, r)| scored(a, m, r)).collect();
            let out = rank_candidates(input.clone());
            prop_assert_eq!(out.len(), input.len());
            for w in out.windows(2) {
                prop_assert!(candidate_order(&w[0], &w[1]) != Ordering::Greater);
            }
            let mut a: Vec<_> = input.iter().map(|c| (c.ap, c.metric.0.to_bits(), c.rssi_dbm.to_bits())).collect();
            let mut b: Vec<_> = out.iter().map(|c| (c.ap, c.metric.0.to_bits(), c.rssi_dbm.to_bits())).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
