//! Generation-scenario taxonomy, manifest records and label derivation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::media_io::Authenticity;

pub const SCENARIO_COUNT: u8 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    LipOnly,
    PoseReferenced,
    ExpressionReferenced,
}

/// Where an input slot comes from, relative to the identity reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotState {
    SameSource,
    CrossSource,
    Empty,
}

/// The six input boxes of a generation scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slots {
    pub reference: SlotState,
    pub audio: SlotState,
    pub pose: SlotState,
    pub eye: SlotState,
    pub expression: SlotState,
    pub upper_face: SlotState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDescriptor {
    pub scenario_id: u8,
    pub generator_family: GeneratorFamily,
    pub slots: Slots,
    pub audio_authentic: bool,
}

const fn referenced(
    scenario_id: u8,
    generator_family: GeneratorFamily,
    audio: SlotState,
    first: SlotState,
    second: SlotState,
) -> ScenarioDescriptor {
    use SlotState::*;
    let (pose, eye, expression, upper_face) = match generator_family {
        GeneratorFamily::PoseReferenced => (first, second, Empty, Empty),
        GeneratorFamily::ExpressionReferenced => (Empty, Empty, first, second),
        GeneratorFamily::LipOnly => (Empty, Empty, Empty, Empty),
    };
    ScenarioDescriptor {
        scenario_id,
        generator_family,
        slots: Slots {
            reference: SameSource,
            audio,
            pose,
            eye,
            expression,
            upper_face,
        },
        audio_authentic: true,
    }
}

const SCENARIOS: [ScenarioDescriptor; SCENARIO_COUNT as usize] = {
    use GeneratorFamily::*;
    use SlotState::*;
    let forged = referenced(11, LipOnly, CrossSource, Empty, Empty);
    [
        // pose/eye referenced
        referenced(1, PoseReferenced, SameSource, SameSource, SameSource),
        referenced(2, PoseReferenced, CrossSource, SameSource, SameSource),
        referenced(3, PoseReferenced, CrossSource, CrossSource, CrossSource),
        referenced(4, PoseReferenced, CrossSource, SameSource, Empty),
        referenced(5, PoseReferenced, CrossSource, Empty, SameSource),
        // expression/upper-face referenced
        referenced(6, ExpressionReferenced, SameSource, SameSource, SameSource),
        referenced(7, ExpressionReferenced, CrossSource, SameSource, SameSource),
        referenced(8, ExpressionReferenced, CrossSource, CrossSource, CrossSource),
        referenced(9, ExpressionReferenced, CrossSource, SameSource, Empty),
        // audio-driven only
        referenced(10, LipOnly, CrossSource, Empty, Empty),
        ScenarioDescriptor {
            audio_authentic: false,
            ..forged
        },
    ]
};

pub fn enumerate_scenarios() -> Vec<ScenarioDescriptor> {
    SCENARIOS.to_vec()
}

pub fn scenario(id: u8) -> Result<&'static ScenarioDescriptor> {
    SCENARIOS
        .iter()
        .find(|d| d.scenario_id == id)
        .ok_or_else(|| Error::Schema(format!("unknown scenario_id {id}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line. `scenario_id` 0 marks a pristine clip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub clip_id: String,
    pub scenario_id: u8,
    pub source_video_id: String,
    pub source_audio_id: String,
    pub split: Split,
}

/// Audio id `a` belongs to video `v` if it equals `v` or is `v/<track>`.
fn audio_belongs_to(audio: &str, video: &str) -> bool {
    audio == video || audio.strip_prefix(video).is_some_and(|rest| rest.starts_with('/'))
}

pub fn validate(record: &ScenarioRecord) -> Result<()> {
    if record.clip_id.is_empty() {
        return Err(Error::Schema("empty clip_id".into()));
    }
    if record.scenario_id == 0 {
        if !audio_belongs_to(&record.source_audio_id, &record.source_video_id) {
            return Err(Error::Schema(format!(
                "pristine clip {} pairs audio {} with video {}",
                record.clip_id, record.source_audio_id, record.source_video_id
            )));
        }
    } else {
        scenario(record.scenario_id)?;
    }
    Ok(())
}

/// `(video_label, audio_label)`.
pub fn derive_labels(record: &ScenarioRecord) -> Result<(Authenticity, Authenticity)> {
    validate(record)?;
    if record.scenario_id == 0 {
        return Ok((Authenticity::Real, Authenticity::Real));
    }
    let audio = match scenario(record.scenario_id)?.audio_authentic {
        true => Authenticity::Real,
        false => Authenticity::Fake,
    };
    Ok((Authenticity::Fake, audio))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

impl SplitCounts {
    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.test
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: usize,
    /// Video-authentic (pristine) records.
    pub real: usize,
    pub fake: usize,
    pub per_scenario: BTreeMap<u8, SplitCounts>,
    pub per_split: SplitCounts,
}

pub fn split_report(records: &[ScenarioRecord]) -> Result<DistributionReport> {
    if records.is_empty() {
        return Err(Error::Data("split_report needs at least one record".into()));
    }
    let mut report = DistributionReport {
        total: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.scenario_id == 0 {
            report.real += 1;
        } else {
            report.fake += 1;
        }
        report.per_scenario.entry(r.scenario_id).or_default().bump(r.split);
        report.per_split.bump(r.split);
    }
    Ok(report)
}

/// Reads a JSON Lines manifest, skipping blank lines.
pub fn read_manifest(path: &Path) -> Result<Vec<ScenarioRecord>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScenarioRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(file, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}
