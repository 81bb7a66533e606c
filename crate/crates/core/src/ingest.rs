//! CAN log parsing, serialization, and synthetic traffic generation.
//!
//! Log lines follow the common candump-style text layout:
//!
//! ```text
//! Timestamp: 0.000222 ID: 0316 DLC: 8 Data: 05 21 68 09 21 21 00 6f
//! ```
//!
//! The parser is tolerant about run-length of whitespace between
//! fields; the writer always emits single spaces, lowercase hex, and
//! the shortest decimal timestamp that round-trips, so
//! serialize-then-parse reproduces a log exactly.

use crate::error::Error;
use crate::types::{CanFrame, CanLog, TrafficClass, CAN_ID_LIMIT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

/// How a traffic capture deviates from plain periodic broadcasting.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    /// Every pool identifier broadcasts at its own period.
    Periodic,
    /// One extra identifier floods the bus.
    Flood {
        /// Identifier used for flooding, typically a high-priority one.
        flood_id: u32,
        /// Fraction of all frames the flood should occupy, in (0, 1).
        fraction: f64,
    },
    /// Frames with uniformly random identifiers and payloads are mixed in.
    RandomInject {
        /// Fraction of all frames that are injected, in (0, 1).
        fraction: f64,
    },
    /// One legitimate pool identifier is replayed at an altered period.
    Replay {
        /// Index into the identifier pool of the replayed identifier.
        pool_index: usize,
        /// Multiplier on that identifier's period for the replayed
        /// copies; values below 1 replay faster than the original.
        period_scale: f64,
    },
}

/// Parameters of a synthetic traffic capture.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    /// Label stamped on every generated frame.
    pub class: TrafficClass,
    /// Legitimate identifiers broadcasting periodically.
    pub id_pool: Vec<u32>,
    /// Mean broadcast period in seconds across the pool.
    pub base_period: f64,
    /// Per-identifier period multiplier range: pool identifier `i` of
    /// `n` broadcasts at `base_period * period_spread^u` with `u`
    /// evenly spaced over [-1, 1], a fixed message matrix. Must be at
    /// least 1; 1 gives every identifier the same period.
    pub period_spread: f64,
    /// Relative timing jitter: each inter-arrival is the period scaled
    /// by a uniform factor in [1 - jitter, 1 + jitter]. In [0, 1).
    pub jitter: f64,
    /// Attack overlay applied to the periodic background.
    pub behavior: Behavior,
}

fn default_pool(n: usize) -> Vec<u32> {
    (0..n as u32).map(|i| 0x100 + 37 * i).collect()
}

impl TrafficProfile {
    /// Benign periodic traffic over a 20-identifier pool.
    pub fn attack_free() -> Self {
        TrafficProfile {
            class: TrafficClass::AttackFree,
            id_pool: default_pool(20),
            base_period: 0.01,
            period_spread: 2.0,
            jitter: 0.1,
            behavior: Behavior::Periodic,
        }
    }

    /// Flooding denial of service: identifier 0x000 claims 30% of
    /// frames. Strong enough to dwarf any legitimate census bin,
    /// moderate enough that the class stays reachable for bounded
    /// whole-vector perturbations.
    pub fn dos() -> Self {
        TrafficProfile {
            class: TrafficClass::DoS,
            behavior: Behavior::Flood {
                flood_id: 0x000,
                fraction: 0.30,
            },
            ..Self::attack_free()
        }
    }

    /// Fuzzing: a quarter of frames carry random identifiers and
    /// payloads, scattering the census over hundreds of one-off bins.
    pub fn fuzzy() -> Self {
        TrafficProfile {
            class: TrafficClass::Fuzzy,
            behavior: Behavior::RandomInject { fraction: 0.25 },
            ..Self::attack_free()
        }
    }

    /// Impersonation: a mid-pool identifier is replayed at several
    /// times its legitimate rate. The replayed census bin has to rise
    /// clearly above every legitimate bin yet stay clearly below a
    /// flood; a gentler replay leaves the class within single-feature
    /// stepping distance of benign traffic.
    pub fn impersonation() -> Self {
        TrafficProfile {
            class: TrafficClass::Impersonation,
            behavior: Behavior::Replay {
                pool_index: 10,
                period_scale: 0.13,
            },
            ..Self::attack_free()
        }
    }

    /// Default profile for a class.
    pub fn for_class(class: TrafficClass) -> Result<Self, Error> {
        match class {
            TrafficClass::AttackFree => Ok(Self::attack_free()),
            TrafficClass::DoS => Ok(Self::dos()),
            TrafficClass::Fuzzy => Ok(Self::fuzzy()),
            TrafficClass::Impersonation => Ok(Self::impersonation()),
            TrafficClass::Adversarial => Err(Error::InvalidInput(
                "no traffic profile exists for the Adversarial label".into(),
            )),
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.id_pool.is_empty() {
            return Err(Error::InvalidInput("identifier pool is empty".into()));
        }
        for &id in &self.id_pool {
            if id >= CAN_ID_LIMIT {
                return Err(Error::InvalidInput(format!(
                    "pool identifier {id:#x} exceeds the 29-bit range"
                )));
            }
        }
        if !(self.base_period > 0.0) || !self.base_period.is_finite() {
            return Err(Error::InvalidInput("base_period must be positive".into()));
        }
        if !(self.period_spread >= 1.0) || !self.period_spread.is_finite() {
            return Err(Error::InvalidInput("period_spread must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::InvalidInput("jitter must lie in [0, 1)".into()));
        }
        match self.behavior {
            Behavior::Periodic => {}
            Behavior::Flood { flood_id, fraction } => {
                if flood_id >= CAN_ID_LIMIT {
                    return Err(Error::InvalidInput("flood identifier out of range".into()));
                }
                if !(0.0 < fraction && fraction < 1.0) {
                    return Err(Error::InvalidInput("flood fraction must lie in (0, 1)".into()));
                }
            }
            Behavior::RandomInject { fraction } => {
                if !(0.0 < fraction && fraction < 1.0) {
                    return Err(Error::InvalidInput(
                        "injection fraction must lie in (0, 1)".into(),
                    ));
                }
            }
            Behavior::Replay {
                pool_index,
                period_scale,
            } => {
                if pool_index >= self.id_pool.len() {
                    return Err(Error::InvalidInput(format!(
                        "replay pool index {pool_index} out of range"
                    )));
                }
                if !(period_scale > 0.0) || !period_scale.is_finite() {
                    return Err(Error::InvalidInput("period_scale must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// What an emitter stamps into the identifier field.
enum EmitterId {
    Fixed(u32),
    Random,
}

/// One scheduled frame source. Time is kept in integer microseconds so
/// scheduling order and zero-jitter inter-arrivals are exact.
struct Emitter {
    id: EmitterId,
    period_us: u64,
    next_us: u64,
}

/// Generates a synthetic capture of `n_frames` frames.
///
/// Identical `(profile, n_frames, seed)` inputs produce identical logs.
/// Timestamps are non-decreasing and quantized to microseconds.
pub fn generate_synthetic(
    profile: &TrafficProfile,
    n_frames: usize,
    seed: u64,
) -> Result<CanLog, Error> {
    profile.validate()?;
    if n_frames == 0 {
        return Err(Error::EmptyInput("requested zero frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let to_us = |seconds: f64| -> u64 { (seconds * 1e6).round().max(1.0) as u64 };

    // Background emitters: one per pool identifier. The message matrix
    // is part of the profile, so period factors form a fixed ladder
    // across the spread; only phases (and jitter) are drawn per log.
    let n_pool = profile.id_pool.len();
    let mut emitters: Vec<Emitter> = Vec::with_capacity(n_pool + 1);
    for (i, &id) in profile.id_pool.iter().enumerate() {
        let u: f64 = if n_pool == 1 {
            0.0
        } else {
            2.0 * i as f64 / (n_pool - 1) as f64 - 1.0
        };
        let period = profile.base_period * profile.period_spread.powf(u);
        emitters.push(Emitter {
            id: EmitterId::Fixed(id),
            period_us: to_us(period),
            next_us: 0,
        });
    }
    for emitter in &mut emitters {
        emitter.next_us = rng.gen_range(0..emitter.period_us);
    }

    // Behavior overlay. Flood and injection rates are chosen so the
    // extra source claims the requested fraction of all frames in
    // expectation: r_extra = fraction / (1 - fraction) * r_background.
    let background_rate: f64 = emitters.iter().map(|e| 1e6 / e.period_us as f64).sum();
    match profile.behavior {
        Behavior::Periodic => {}
        Behavior::Flood { flood_id, fraction } => {
            let rate = fraction / (1.0 - fraction) * background_rate;
            let period_us = to_us(1.0 / rate);
            let next_us = rng.gen_range(0..period_us);
            emitters.push(Emitter {
                id: EmitterId::Fixed(flood_id),
                period_us,
                next_us,
            });
        }
        Behavior::RandomInject { fraction } => {
            let rate = fraction / (1.0 - fraction) * background_rate;
            let period_us = to_us(1.0 / rate);
            let next_us = rng.gen_range(0..period_us);
            emitters.push(Emitter {
                id: EmitterId::Random,
                period_us,
                next_us,
            });
        }
        Behavior::Replay {
            pool_index,
            period_scale,
        } => {
            let base = &emitters[pool_index];
            let period_us = ((base.period_us as f64 * period_scale).round().max(1.0)) as u64;
            let id = profile.id_pool[pool_index];
            let next_us = rng.gen_range(0..period_us);
            emitters.push(Emitter {
                id: EmitterId::Fixed(id),
                period_us,
                next_us,
            });
        }
    }

    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        // Earliest emitter fires; ties resolve to the lowest index.
        let idx = emitters
            .iter()
            .enumerate()
            .min_by_key(|(i, e)| (e.next_us, *i))
            .map(|(i, _)| i)
            .expect("at least one emitter");
        let t_us = emitters[idx].next_us;

        let can_id = match emitters[idx].id {
            EmitterId::Fixed(id) => id,
            EmitterId::Random => rng.gen_range(0..0x800),
        };
        let mut payload = [0u8; 8];
        rng.fill(&mut payload[..]);

        frames.push(CanFrame {
            timestamp: t_us as f64 * 1e-6,
            can_id,
            dlc: 8,
            payload: payload.to_vec(),
            class: profile.class,
        });

        let e = &mut emitters[idx];
        let step = if profile.jitter > 0.0 {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            let scaled = e.period_us as f64 * (1.0 + profile.jitter * u);
            scaled.round().max(1.0) as u64
        } else {
            e.period_us
        };
        e.next_us += step;
    }

    Ok(CanLog {
        frames,
        source: format!("synth:{}", profile.class),
    })
}

/// Parses a candump-style text capture. Every frame is labeled `class`.
///
/// Fails on the first malformed line (reporting its 1-based number), on
/// a timestamp regression, and on input containing no frames at all.
pub fn parse_can_log(text: &str, class: TrafficClass, source: &str) -> Result<CanLog, Error> {
    let mut frames = Vec::new();
    let mut prev_ts = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let frame = parse_line(raw, class).map_err(|msg| Error::Parse {
            line: line_no,
            msg,
        })?;
        if frame.timestamp < prev_ts {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "timestamp {} regresses below {}",
                    frame.timestamp, prev_ts
                ),
            });
        }
        prev_ts = frame.timestamp;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("log contains no frames"));
    }
    Ok(CanLog {
        frames,
        source: source.to_string(),
    })
}

fn expect_keyword<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    kw: &str,
) -> Result<(), String> {
    match tokens.next() {
        Some(t) if t == kw => Ok(()),
        Some(t) => Err(format!("expected {kw:?}, found {t:?}")),
        None => Err(format!("expected {kw:?}, found end of line")),
    }
}

fn parse_line(line: &str, class: TrafficClass) -> Result<CanFrame, String> {
    let mut tokens = line.split_whitespace();

    expect_keyword(&mut tokens, "Timestamp:")?;
    let ts_tok = tokens.next().ok_or("missing timestamp value")?;
    let timestamp: f64 = ts_tok
        .parse()
        .map_err(|_| format!("bad timestamp {ts_tok:?}"))?;
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(format!("timestamp {ts_tok:?} is not finite and non-negative"));
    }

    expect_keyword(&mut tokens, "ID:")?;
    let id_tok = tokens.next().ok_or("missing identifier")?;
    let can_id = u32::from_str_radix(id_tok, 16).map_err(|_| format!("bad identifier {id_tok:?}"))?;
    if can_id >= CAN_ID_LIMIT {
        return Err(format!("identifier {id_tok:?} exceeds the 29-bit range"));
    }

    expect_keyword(&mut tokens, "DLC:")?;
    let dlc_tok = tokens.next().ok_or("missing DLC")?;
    let dlc: u8 = dlc_tok.parse().map_err(|_| format!("bad DLC {dlc_tok:?}"))?;
    if dlc > 8 {
        return Err(format!("DLC {dlc} exceeds 8"));
    }

    expect_keyword(&mut tokens, "Data:")?;
    let mut payload = Vec::with_capacity(dlc as usize);
    for k in 0..dlc {
        let byte_tok = tokens
            .next()
            .ok_or_else(|| format!("DLC {dlc} but only {k} data bytes"))?;
        let byte =
            u8::from_str_radix(byte_tok, 16).map_err(|_| format!("bad data byte {byte_tok:?}"))?;
        payload.push(byte);
    }
    if let Some(extra) = tokens.next() {
        return Err(format!("DLC {dlc} but extra token {extra:?} after payload"));
    }

    Ok(CanFrame {
        timestamp,
        can_id,
        dlc,
        payload,
        class,
    })
}

/// Serializes a log back to the candump-style text layout.
///
/// Timestamps print as the shortest decimal that parses back to the
/// same binary value, so `parse_can_log(write_can_log(log))` restores
/// the frame sequence exactly.
pub fn write_can_log(log: &CanLog) -> String {
    let mut out = String::new();
    for frame in &log.frames {
        let _ = write!(
            out,
            "Timestamp: {} ID: {:04x} DLC: {} Data:",
            frame.timestamp, frame.can_id, frame.dlc
        );
        for byte in &frame.payload {
            let _ = write!(out, " {byte:02x}");
        }
        out.push('\n');
    }
    out
}

/// Reads and parses a log file.
pub fn load_can_log(path: &Path, class: TrafficClass) -> Result<CanLog, Error> {
    let text = std::fs::read_to_string(path)?;
    parse_can_log(&text, class, &path.display().to_string())
}

/// Writes a log file in the candump-style text layout.
pub fn save_can_log(log: &CanLog, path: &Path) -> Result<(), Error> {
    std::fs::write(path, write_can_log(log))?;
    Ok(())
}
