use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{fwhm_per_sigma, Arrival, DetectionEvent, Origin, TaggerModel};
use crate::fabric::SpdChannel;

/// Single-photon detector response.
///
/// Each arrival clicks with the detector efficiency and picks up Gaussian
/// timing jitter; dark counts are added as a Poisson process over
/// `[0, duration)`. Clicks closer than the dead time to the previous accepted
/// click are lost (non-paralysable). The output is sorted by time.
pub fn detect(
    arrivals: &[Arrival],
    detector: &SpdChannel,
    duration_s: f64,
    seed: u64,
) -> Vec<DetectionEvent> {
    let mut photons = crate::rng::stream(seed, 0);
    let mut darks = crate::rng::stream(seed, 1);
    let jitter = Normal::new(0.0, detector.jitter_fwhm_ps / fwhm_per_sigma()).expect("jitter >= 0");

    let mut events: Vec<DetectionEvent> = Vec::with_capacity(arrivals.len());
    for a in arrivals {
        let u: f64 = photons.random();
        let dt = jitter.sample(&mut photons);
        if u < detector.efficiency {
            events.push(DetectionEvent {
                channel: detector.index,
                timestamp_ps: a.time_ps + dt,
                origin: Origin::Photon,
            });
        }
    }

    if detector.dark_rate_hz > 0.0 && duration_s > 0.0 {
        let gaps = Exp::new(detector.dark_rate_hz * 1e-12).expect("rate > 0");
        let end = duration_s * 1e12;
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut darks);
            if t >= end {
                break;
            }
            events.push(DetectionEvent {
                channel: detector.index,
                timestamp_ps: t,
                origin: Origin::Dark,
            });
        }
    }

    events.sort_by(|a, b| a.timestamp_ps.total_cmp(&b.timestamp_ps));
    if detector.dead_time_ps > 0.0 {
        let mut last = f64::NEG_INFINITY;
        events.retain(|e| {
            if e.timestamp_ps - last < detector.dead_time_ps {
                false
            } else {
                last = e.timestamp_ps;
                true
            }
        });
    }
    events
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedStream {
    pub events: Vec<DetectionEvent>,
    /// Set when the throughput limit forced events to be dropped.
    pub saturated: bool,
}

/// Time-to-digital conversion: tagger jitter, quantisation to the resolution
/// and a throughput limit over a sliding window. Negative times clamp to 0.
pub fn time_tag(events: &[DetectionEvent], tagger: &TaggerModel, seed: u64) -> TaggedStream {
    let mut rng = crate::rng::stream(seed, 0);
    let jitter = Normal::new(0.0, tagger.jitter_fwhm_ps / fwhm_per_sigma()).expect("jitter >= 0");
    let mut tagged: Vec<DetectionEvent> = events
        .iter()
        .map(|e| {
            let t = e.timestamp_ps + jitter.sample(&mut rng);
            DetectionEvent {
                timestamp_ps: ((t / tagger.resolution_ps).round() * tagger.resolution_ps).max(0.0),
                ..*e
            }
        })
        .collect();
    tagged.sort_by(|a, b| {
        a.timestamp_ps
            .total_cmp(&b.timestamp_ps)
            .then(a.channel.cmp(&b.channel))
    });

    let cap = ((tagger.max_rate_hz * tagger.rate_window_ps * 1e-12).floor() as usize).max(1);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cap);
    let mut saturated = false;
    tagged.retain(|e| {
        while let Some(&front) = window.front() {
            if e.timestamp_ps - front >= tagger.rate_window_ps {
                window.pop_front();
            } else {
                break;
            }
        }
        if window.len() < cap {
            window.push_back(e.timestamp_ps);
            true
        } else {
            saturated = true;
            false
        }
    });
    TaggedStream {
        events: tagged,
        saturated,
    }
}
