use serde::{Deserialize, Serialize};

use super::LoadSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub load: String,
    pub on: bool,
}

/// Switching events of all loads over `[0, horizon)`. Every load is off
/// before `t = 0`; a load whose wave starts in its on-state gets an on-event
/// at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSchedule {
    /// Sorted by time, ties broken by load order.
    pub events: Vec<SwitchEvent>,
    pub horizon: f64,
}

impl SwitchSchedule {
    pub fn events_for<'a>(&'a self, load: &'a str) -> impl Iterator<Item = &'a SwitchEvent> + 'a {
        self.events.iter().filter(move |e| e.load == load)
    }
}

/// On/off state of a rectangular wave that turns on at `(k + start_phase)/f`
/// and stays on for `duty/f`.
pub fn rectangular_state(t: f64, frequency: f64, duty: f64, start_phase: f64) -> bool {
    (frequency * t - start_phase).rem_euclid(1.0) < duty
}

/// Toggle times of one rectangular wave over `[0, horizon)`, as (time, on).
pub(crate) fn toggle_times(frequency: f64, duty: f64, start_phase: f64, horizon: f64) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    // The period that began before t = 0 may still be in its on-state.
    let prev_off = (start_phase - 1.0 + duty) / frequency;
    if prev_off > 0.0 {
        out.push((0.0, true));
        if prev_off < horizon {
            out.push((prev_off, false));
        }
    }
    let mut k = 0u64;
    loop {
        let on = (k as f64 + start_phase) / frequency;
        if on >= horizon {
            break;
        }
        out.push((on, true));
        let off = (k as f64 + start_phase + duty) / frequency;
        if off < horizon {
            out.push((off, false));
        }
        k += 1;
    }
    out
}

pub fn make_schedule(loads: &[LoadSpec], duration: f64) -> SwitchSchedule {
    let mut tagged: Vec<(f64, usize, bool)> = Vec::new();
    for (i, load) in loads.iter().enumerate() {
        for (t, on) in toggle_times(load.switch_frequency_hz, load.duty, load.start_phase, duration) {
            tagged.push((t, i, on));
        }
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    SwitchSchedule {
        events: tagged
            .into_iter()
            .map(|(time, i, on)| SwitchEvent {
                time,
                load: loads[i].id.clone(),
                on,
            })
            .collect(),
        horizon: duration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Phase;

    fn load(f: f64, duty: f64, start: f64) -> LoadSpec {
        LoadSpec {
            id: format!("f{f}"),
            supply_point: "P2".into(),
            phases: vec![Phase::L1],
            rated_power_kw: 1.0,
            switch_frequency_hz: f,
            duty,
            start_phase: start,
        }
    }

    fn on_intervals(s: &SwitchSchedule, id: &str) -> Vec<f64> {
        let ev: Vec<_> = s.events_for(id).collect();
        ev.windows(2)
            .filter(|w| w[0].on && !w[1].on)
            .map(|w| w[1].time - w[0].time)
            .collect()
    }

    #[test]
    fn five_hz_half_duty() {
        let s = make_schedule(&[load(5.0, 0.5, 0.0)], 1.0);
        assert_eq!(s.events.len(), 10);
        assert!(s.events[0].on && s.events[0].time == 0.0);
        for d in on_intervals(&s, "f5") {
            assert!((d - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_duty_on_time() {
        let s = make_schedule(&[load(1.0, 0.25, 0.0)], 3.0);
        let d = on_intervals(&s, "f1");
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|d| (d - 0.25).abs() < 1e-12));
    }

    #[test]
    fn one_fifty_hz_count() {
        let s = make_schedule(&[load(150.0, 0.5, 0.0)], 1.0);
        assert_eq!(s.events.len(), 300);
    }

    #[test]
    fn starts_on_when_phase_says_so() {
        // Turn-on at 0.9 of the period, on for 0.5 → on at t = 0 until 0.4/f.
        let s = make_schedule(&[load(2.0, 0.5, 0.9)], 1.0);
        let ev: Vec<_> = s.events.iter().map(|e| (e.time, e.on)).collect();
        assert_eq!(ev[0], (0.0, true));
        assert!((ev[1].0 - 0.2).abs() < 1e-12 && !ev[1].1);
        assert!(rectangular_state(0.0, 2.0, 0.5, 0.9));
    }

    #[test]
    fn states_alternate_and_times_increase() {
        for &(f, d, s0) in &[(0.7, 0.3, 0.1), (13.0, 0.8, 0.95), (149.0, 0.4, 0.5)] {
            let s = make_schedule(&[load(f, d, s0)], 10.0);
            let ev: Vec<_> = s.events.iter().collect();
            assert!(ev[0].on);
            for w in ev.windows(2) {
                assert!(w[1].time > w[0].time);
                assert_ne!(w[0].on, w[1].on);
            }
            let expected = (2.0 * f * 10.0).floor() as i64;
            assert!((ev.len() as i64 - expected).abs() <= 1, "f={f}: {} vs {expected}", ev.len());
            for e in &ev {
                assert_eq!(rectangular_state(e.time + 1e-9, f, d, s0), e.on);
            }
        }
    }
}
