//! Classification labels and malware family tags shared across the crate.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Binary ground-truth / prediction label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "malicious" => Ok(Label::Malicious),
            other => Err(format!("unknown label {other:?} (expected benign|malicious)")),
        }
    }
}

/// Traffic family tag: the malware types of the sample corpus, plus
/// `Benign` for clean traffic and `Unknown` for unattributed malware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Trojan,
    Ddos,
    Botnet,
    OsScan,
    Keylogger,
    Backdoor,
    Unknown,
    Benign,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Trojan => "trojan",
            Family::Ddos => "ddos",
            Family::Botnet => "botnet",
            Family::OsScan => "os_scan",
            Family::Keylogger => "keylogger",
            Family::Backdoor => "backdoor",
            Family::Unknown => "unknown",
            Family::Benign => "benign",
        }
    }

    /// The label implied by the family tag: `benign` iff the family is `Benign`.
    pub fn implied_label(self) -> Label {
        match self {
            Family::Benign => Label::Benign,
            _ => Label::Malicious,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trojan" => Ok(Family::Trojan),
            "ddos" => Ok(Family::Ddos),
            "botnet" => Ok(Family::Botnet),
            "os_scan" => Ok(Family::OsScan),
            "keylogger" => Ok(Family::Keylogger),
            "backdoor" => Ok(Family::Backdoor),
            "unknown" => Ok(Family::Unknown),
            "benign" => Ok(Family::Benign),
            other => Err(format!("unknown family {other:?}")),
        }
    }
}
