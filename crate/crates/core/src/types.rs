//! CAN traffic domain types.

use crate::error::Error;
use std::fmt;

/// Largest extended (29-bit) CAN identifier plus one.
pub const CAN_ID_LIMIT: u32 = 1 << 29;

/// Ground-truth label carried by frames, feature windows, and models.
///
/// The first four variants mirror the traffic conditions the testbed
/// generates; `Adversarial` exists only as a training label for
/// perturbed feature rows folded back in during augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficClass {
    /// Benign periodic traffic.
    AttackFree,
    /// Flooding with a single high-priority identifier.
    DoS,
    /// Random identifiers and payloads injected into the stream.
    Fuzzy,
    /// A legitimate identifier replayed at an altered period.
    Impersonation,
    /// Perturbed feature rows admitted by the detection sandbox.
    Adversarial,
}

impl TrafficClass {
    /// All classes in canonical order. Class indices used by models
    /// follow this ordering.
    pub const ALL: [TrafficClass; 5] = [
        TrafficClass::AttackFree,
        TrafficClass::DoS,
        TrafficClass::Fuzzy,
        TrafficClass::Impersonation,
        TrafficClass::Adversarial,
    ];

    /// The four traffic-level classes, excluding `Adversarial`.
    pub const TRAFFIC: [TrafficClass; 4] = [
        TrafficClass::AttackFree,
        TrafficClass::DoS,
        TrafficClass::Fuzzy,
        TrafficClass::Impersonation,
    ];

    /// Stable name used in CSV labels and canonical encodings.
    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::AttackFree => "AttackFree",
            TrafficClass::DoS => "DoS",
            TrafficClass::Fuzzy => "Fuzzy",
            TrafficClass::Impersonation => "Impersonation",
            TrafficClass::Adversarial => "Adversarial",
        }
    }

    /// Parses a class name. Case-insensitive; accepts `attack-free`
    /// and `attack_free` spellings.
    pub fn parse(s: &str) -> Result<TrafficClass, Error> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "attackfree" | "benign" | "normal" => Ok(TrafficClass::AttackFree),
            "dos" => Ok(TrafficClass::DoS),
            "fuzzy" => Ok(TrafficClass::Fuzzy),
            "impersonation" => Ok(TrafficClass::Impersonation),
            "adversarial" => Ok(TrafficClass::Adversarial),
            _ => Err(Error::InvalidInput(format!("unknown traffic class {s:?}"))),
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One CAN frame as it appears in a log capture.
#[derive(Debug, Clone, PartialEq)]
pub struct CanFrame {
    /// Capture time in seconds.
    pub timestamp: f64,
    /// CAN identifier, below [`CAN_ID_LIMIT`].
    pub can_id: u32,
    /// Data length code, 0 through 8.
    pub dlc: u8,
    /// Payload bytes; length equals `dlc`.
    pub payload: Vec<u8>,
    /// Ground-truth label of the capture this frame belongs to.
    pub class: TrafficClass,
}

impl CanFrame {
    /// Checks the structural invariants of a frame.
    pub fn validate(&self) -> Result<(), Error> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(Error::InvalidInput(format!(
                "timestamp {} is not a finite non-negative number",
                self.timestamp
            )));
        }
        if self.can_id >= CAN_ID_LIMIT {
            return Err(Error::InvalidInput(format!(
                "CAN id {:#x} exceeds the 29-bit range",
                self.can_id
            )));
        }
        if self.dlc > 8 {
            return Err(Error::InvalidInput(format!("DLC {} exceeds 8", self.dlc)));
        }
        if self.payload.len() != self.dlc as usize {
            return Err(Error::InvalidInput(format!(
                "payload length {} does not match DLC {}",
                self.payload.len(),
                self.dlc
            )));
        }
        Ok(())
    }
}

/// An ordered CAN capture with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CanLog {
    /// Frames in non-decreasing timestamp order.
    pub frames: Vec<CanFrame>,
    /// Where the log came from: a file path or a synthesis tag.
    pub source: String,
}

impl CanLog {
    /// Checks frame validity and timestamp monotonicity.
    pub fn validate(&self) -> Result<(), Error> {
        let mut prev = f64::NEG_INFINITY;
        for (i, frame) in self.frames.iter().enumerate() {
            frame.validate().map_err(|e| {
                Error::InvalidInput(format!("frame {i} of {}: {e}", self.source))
            })?;
            if frame.timestamp < prev {
                return Err(Error::InvalidInput(format!(
                    "frame {i} of {}: timestamp {} decreases",
                    self.source, frame.timestamp
                )));
            }
            prev = frame.timestamp;
        }
        Ok(())
    }
}
