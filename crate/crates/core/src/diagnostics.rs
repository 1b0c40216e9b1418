use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Notable events while ranking one sample. Emitted in the per-sample report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    ClassificationRepaired,
    ClassificationDefaulted,
    ManualKindMissing,
    NliRenormalized,
    KeyPointsTruncated,
    LongKeyPoint,
    FallbackToIalr,
    InstancesMissing,
    ListwiseReparsed,
    ListwiseRetried,
    /// The listwise ranker gave no usable permutation and a fallback ranked the sample.
    Fallback,
    ScoreRetried,
    ScoreDefaulted,
    ComparisonFailed,
    Recompared,
    RankingFailed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub flags: BTreeSet<Flag>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn flag(&mut self, flag: Flag, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(?flag, "{message}");
        self.flags.insert(flag);
        self.warnings.push(message);
    }

    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn merge(&mut self, other: Diagnostics) {
        self.flags.extend(other.flags);
        self.warnings.extend(other.warnings);
    }
}
