//! Seeded synthetic sessions.
//!
//! Sick sessions navigate faster, turn harder and show more head-rotation
//! jitter; their EDA carries an upward tonic drift and frequent phasic
//! bursts. Non-sick sessions have a flat tonic level and sparse bursts.
//! `separation` scales every class difference (0 makes the classes
//! indistinguishable apart from the SSQ scores).

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{
    expected_len, ChannelSeries, RawSession, Result, TelemetryError, BVP, EDA, POS_X, POS_Y,
    POS_Z, ROTATION, ROT_X, ROT_Y, ROT_Z, SPEED, TEM,
};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub duration_s: u32,
    pub head_rate_hz: f64,
    pub eda_rate_hz: f64,
    pub bvp_rate_hz: f64,
    pub tem_rate_hz: f64,
    pub include_bvp_tem: bool,
    pub sick_probability: f64,
    /// Uniform range of the SSQ delta for sick sessions.
    pub sick_delta: (f64, f64),
    /// Uniform range of the SSQ delta for non-sick sessions.
    pub non_sick_delta: (f64, f64),
    /// Pre-exposure SSQ is uniform on `[0, ssq_pre_max]`.
    pub ssq_pre_max: f64,
    pub separation: f64,
    /// Phasic bursts per minute for non-sick sessions.
    pub scr_rate_non_sick: f64,
    /// Phasic bursts per minute for sick sessions at `separation = 1`.
    pub scr_rate_sick: f64,
    /// Tonic drift in µS per minute for sick sessions at `separation = 1`.
    pub tonic_drift_sick: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            duration_s: super::DEFAULT_DURATION_S,
            head_rate_hz: super::HEAD_RATE_HZ,
            eda_rate_hz: super::EDA_RATE_HZ,
            bvp_rate_hz: super::BVP_RATE_HZ,
            tem_rate_hz: super::TEM_RATE_HZ,
            include_bvp_tem: true,
            sick_probability: 0.55,
            sick_delta: (25.0, 60.0),
            non_sick_delta: (0.0, 15.0),
            ssq_pre_max: 15.0,
            separation: 1.0,
            scr_rate_non_sick: 1.5,
            scr_rate_sick: 6.0,
            tonic_drift_sick: 0.4,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TelemetryError::InvalidInput(format!("generator config: {msg}")));
        if self.duration_s == 0 {
            return bad("duration must be positive");
        }
        for rate in [
            self.head_rate_hz,
            self.eda_rate_hz,
            self.bvp_rate_hz,
            self.tem_rate_hz,
        ] {
            if !(rate.is_finite() && rate > 0.0) {
                return bad("rates must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.sick_probability) {
            return bad("sick_probability must lie in [0, 1]");
        }
        for (lo, hi) in [self.sick_delta, self.non_sick_delta] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("delta ranges must be finite with lo <= hi");
            }
        }
        if !(self.ssq_pre_max >= 0.0) || self.non_sick_delta.0 + self.ssq_pre_max < 0.0 {
            return bad("ssq_pre_max must be non-negative");
        }
        if !(self.separation >= 0.0)
            || !(self.scr_rate_non_sick >= 0.0)
            || !(self.scr_rate_sick >= 0.0)
            || !self.tonic_drift_sick.is_finite()
        {
            return bad("separation and burst rates must be non-negative");
        }
        Ok(())
    }
}

/// Generates one session; identical `(config, seed)` give identical output.
pub fn generate_synthetic_session(config: &SyntheticConfig, seed: u64) -> Result<RawSession> {
    config.validate()?;
    let mut rng = stream(seed, &[]);

    let sick = rng.random_bool(config.sick_probability);
    let (lo, hi) = if sick {
        config.sick_delta
    } else {
        config.non_sick_delta
    };
    let delta = uniform(&mut rng, lo, hi);
    // Keep the pre score high enough that post stays non-negative.
    let pre_floor = (-delta).max(0.0);
    let ssq_pre = uniform(&mut rng, pre_floor, pre_floor.max(config.ssq_pre_max));
    let ssq_post = ssq_pre + delta;

    let level = if sick { config.separation } else { 0.0 };
    let mut channels = kinematics(config, level, &mut rng);
    channels.push(eda(config, sick, level, &mut rng));
    if config.include_bvp_tem {
        channels.extend(bvp_tem(config, &mut rng));
    }

    RawSession::new(
        format!("synth-{seed:016x}"),
        format!("p-{seed:016x}"),
        config.duration_s,
        channels,
        ssq_pre,
        ssq_post,
    )
}

/// `n` sessions named `session-0000`, `session-0001`, ... with per-session
/// seeds derived from `seed`.
pub fn generate_dataset(config: &SyntheticConfig, n: usize, seed: u64) -> Result<Vec<RawSession>> {
    (0..n)
        .map(|i| {
            let mut s = generate_synthetic_session(config, derive_seed(seed, &[i as u64]))?;
            s.session_id = format!("session-{i:04}");
            s.participant_id = format!("participant-{i:04}");
            Ok(s)
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// AR(1) process with stationary standard deviation `sigma`.
struct Ar1 {
    phi: f64,
    sigma: f64,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            phi,
            sigma,
            state: sigma * normal(rng),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state =
            self.phi * self.state + (1.0 - self.phi * self.phi).sqrt() * self.sigma * normal(rng);
        self.state
    }
}

fn kinematics(config: &SyntheticConfig, level: f64, rng: &mut ChaCha8Rng) -> Vec<ChannelSeries> {
    let rate = config.head_rate_hz;
    let n = expected_len(config.duration_s, rate);
    let dt = 1.0 / rate;

    let base_speed = uniform(rng, 0.8, 1.2) + 0.8 * level;
    let speed_period = uniform(rng, 15.0, 40.0);
    let speed_phase = uniform(rng, 0.0, 2.0 * PI);
    let turn_amp = uniform(rng, 5.0, 15.0) * (1.0 + 1.5 * level);
    let turn_period = uniform(rng, 10.0, 30.0);
    let turn_phase = uniform(rng, 0.0, 2.0 * PI);
    let bob_freq = uniform(rng, 1.6, 2.0);
    let height = uniform(rng, 1.5, 1.8);
    let jitter = 1.0 + 1.5 * level;

    let mut speed_noise = Ar1::new(0.98, 0.05 * (1.0 + level), rng);
    let mut turn_noise = Ar1::new(0.98, 3.0 * (1.0 + level), rng);
    let mut pitch = Ar1::new(0.98, 2.0 * jitter, rng);
    let mut roll = Ar1::new(0.98, 1.5 * jitter, rng);
    let mut yaw_jitter = Ar1::new(0.95, 1.0 * jitter, rng);
    let mut bob_noise = Ar1::new(0.9, 0.005 * jitter, rng);

    let mut out: [Vec<f64>; 8] = Default::default();
    let (mut x, mut z, mut heading) = (0.0f64, 0.0f64, uniform(rng, 0.0, 360.0));
    for k in 0..n {
        let t = k as f64 * dt;
        let speed = (base_speed
            + 0.25 * (1.0 + level) * (2.0 * PI * t / speed_period + speed_phase).sin()
            + speed_noise.step(rng))
        .max(0.0);
        let rotation = turn_amp * (2.0 * PI * t / turn_period + turn_phase).sin() + turn_noise.step(rng);
        heading += rotation * dt;
        let rad = heading.to_radians();
        x += speed * rad.cos() * dt;
        z += speed * rad.sin() * dt;
        let y = height
            + 0.02 * (1.0 + level) * (2.0 * PI * bob_freq * t).sin()
            + bob_noise.step(rng);

        out[0].push(x);
        out[1].push(y);
        out[2].push(z);
        out[3].push(-5.0 + pitch.step(rng));
        out[4].push(heading + yaw_jitter.step(rng));
        out[5].push(roll.step(rng));
        out[6].push(speed);
        out[7].push(rotation);
    }
    let names = [POS_X, POS_Y, POS_Z, ROT_X, ROT_Y, ROT_Z, SPEED, ROTATION];
    names
        .iter()
        .zip(out)
        .map(|(name, values)| ChannelSeries {
            name: name.to_string(),
            rate_hz: rate,
            values,
        })
        .collect()
}

fn eda(config: &SyntheticConfig, sick: bool, level: f64, rng: &mut ChaCha8Rng) -> ChannelSeries {
    let rate = config.eda_rate_hz;
    let n = expected_len(config.duration_s, rate);
    let dt = 1.0 / rate;

    let base = uniform(rng, 1.0, 6.0);
    let drift_per_s = (level * config.tonic_drift_sick + 0.05 * normal(rng)) / 60.0;
    let mut wander = Ar1::new(0.995, 0.05, rng);

    let per_minute = if sick {
        config.scr_rate_non_sick + level * (config.scr_rate_sick - config.scr_rate_non_sick)
    } else {
        config.scr_rate_non_sick
    };
    let mut phasic = vec![0.0; n];
    if per_minute > 0.0 {
        let gaps = Exp::new(per_minute / 60.0).expect("positive rate");
        let (tau_rise, tau_decay) = (0.75f64, 2.0f64);
        // Peak of exp(-t/decay) - exp(-t/rise), used to normalize the shape.
        let t_peak = tau_rise * tau_decay / (tau_decay - tau_rise) * (tau_decay / tau_rise).ln();
        let peak = (-t_peak / tau_decay).exp() - (-t_peak / tau_rise).exp();
        let mut onset = gaps.sample(rng);
        while onset < f64::from(config.duration_s) {
            let amp = uniform(rng, 0.05, 0.5) * (1.0 + 0.5 * level);
            let first = (onset * rate).ceil() as usize;
            for (k, p) in phasic.iter_mut().enumerate().skip(first) {
                let s = k as f64 * dt - onset;
                if s > 10.0 * tau_decay {
                    break;
                }
                *p += amp * ((-s / tau_decay).exp() - (-s / tau_rise).exp()) / peak;
            }
            onset += gaps.sample(rng);
        }
    }

    let values = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let tonic = base + drift_per_s * t + wander.step(rng);
            (tonic + phasic[k] + 0.003 * normal(rng)).max(0.01)
        })
        .collect();
    ChannelSeries {
        name: EDA.to_string(),
        rate_hz: rate,
        values,
    }
}

fn bvp_tem(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> [ChannelSeries; 2] {
    let heart_hz = uniform(rng, 1.0, 1.5);
    let n_bvp = expected_len(config.duration_s, config.bvp_rate_hz);
    let bvp = (0..n_bvp)
        .map(|k| {
            let t = k as f64 / config.bvp_rate_hz;
            (2.0 * PI * heart_hz * t).sin() + 0.05 * normal(rng)
        })
        .collect();

    let skin = uniform(rng, 33.0, 35.5);
    let mut wander = Ar1::new(0.99, 0.05, rng);
    let n_tem = expected_len(config.duration_s, config.tem_rate_hz);
    let tem = (0..n_tem).map(|_| skin + wander.step(rng)).collect();
    [
        ChannelSeries {
            name: BVP.to_string(),
            rate_hz: config.bvp_rate_hz,
            values: bvp,
        },
        ChannelSeries {
            name: TEM.to_string(),
            rate_hz: config.tem_rate_hz,
            values: tem,
        },
    ]
}
