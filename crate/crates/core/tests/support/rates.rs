//! Singles and coincidence rates of the field-test layout against the
//! analytic link budget.

use qisp_core::analysis::{build_histogram, coincidence_metrics, HistogramParams};
use qisp_core::fabric::UserId;
use qisp_core::scenario::Scenario;
use qisp_core::QispConfig;

#[derive(Debug, Clone)]
pub struct RateCheck {
    pub name: &'static str,
    pub measured: f64,
    pub expected: f64,
    pub sigma: f64,
}

impl RateCheck {
    pub fn z(&self) -> f64 {
        (self.measured - self.expected) / self.sigma
    }

    pub fn within(&self, k: f64) -> bool {
        self.z().abs() <= k
    }
}

pub const PEAK_HALFWIDTH_PS: f64 = 1000.0;

pub fn field_test(dead_time: bool) -> Scenario {
    let cfg = QispConfig::default_inquire();
    let mut s = Scenario::field_test(&cfg, UserId::new(1).unwrap()).unwrap();
    if !dead_time {
        s.signal.detector.dead_time_ps = 0.0;
        s.idler.detector.dead_time_ps = 0.0;
    }
    s
}

/// Counts over `duration_s` at the configured pair rate.
///
/// With `dead_time` off the singles follow `R·η·T + dark` exactly in
/// expectation; with it on, the non-paralysable correction `n/(1 + n·τ)`
/// is applied to the prediction instead.
pub fn rate_checks(duration_s: f64, seed: u64, dead_time: bool) -> Vec<RateCheck> {
    let s = field_test(dead_time);
    let out = s.simulate(duration_s, seed).unwrap();
    let r = s.source.pair_rate_hz;
    let arm_s = s.signal.arm.as_ref().unwrap();
    let arm_i = s.idler.arm.as_ref().unwrap();
    let (det_s, det_i) = (&s.signal.detector, &s.idler.detector);

    let mut checks = Vec::new();
    let mut singles = Vec::new();
    for (name, events, det, t) in [
        ("signal singles", &out.signal, det_s, arm_s.transmission()),
        ("idler singles", &out.idler, det_i, arm_i.transmission()),
    ] {
        let raw = r * det.efficiency * t + det.dark_rate_hz;
        let rate = if dead_time {
            raw / (1.0 + raw * det.dead_time_ps * 1e-12)
        } else {
            raw
        };
        let expected = rate * duration_s;
        let measured = events.len() as f64;
        singles.push(measured / duration_s);
        checks.push(RateCheck {
            name,
            measured,
            expected,
            sigma: expected.sqrt(),
        });
    }

    let p = HistogramParams::default();
    let hist = build_histogram(&out.signal, &out.idler, p.bin_ps, p.window_ps).unwrap();
    let m = coincidence_metrics(&hist, 0.0, PEAK_HALFWIDTH_PS, duration_s).unwrap();
    let true_rate = r * det_s.efficiency * det_i.efficiency * arm_s.transmission() * arm_i.transmission();
    let expected = true_rate * duration_s;
    checks.push(RateCheck {
        name: "coincidences",
        measured: m.coincidences - m.accidentals,
        expected,
        sigma: (expected + 2.0 * m.accidentals).sqrt(),
    });

    // the peak window holds true pairs plus accidentals, hence the 1 +
    let predicted_car = 1.0 + true_rate / (singles[0] * singles[1] * 2.0 * PEAK_HALFWIDTH_PS * 1e-12);
    let accidental_fraction = (1.0 / m.accidentals.max(1.0) + 1.0 / m.coincidences.max(1.0)).sqrt();
    checks.push(RateCheck {
        name: "CAR",
        measured: m.car,
        expected: predicted_car,
        sigma: m.car * accidental_fraction,
    });
    checks
}
