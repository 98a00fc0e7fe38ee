//! Dataset ingestion: patient metadata files, recording audio, and
//! stratified patient-level splits.
//!
//! Two on-disk layouts are supported. The 2022-style layout has one
//! `<id>.txt` metadata file per patient plus `<id>_<LOC>.wav` recordings;
//! the 2016-style layout is a `RECORDS` index listing one WAV per line,
//! ingested as unlabeled single-recording patients.

mod wav;

pub use wav::{decode_wav, probe_wav, write_wav_mono16, WavInfo};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::seed;
use rand::seq::SliceRandom;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("unknown location code `{0}`")]
    UnknownLocationCode(String),
    #[error("missing mandatory annotation `{0}`")]
    MissingMandatoryAnnotation(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("contradictory labels: {0}")]
    ContradictoryLabels(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("stratum too small: {0}")]
    StratumTooSmall(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Auscultation location of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Av,
    Pv,
    Tv,
    Mv,
    Phc,
    Other,
}

impl Location {
    pub fn code(self) -> &'static str {
        match self {
            Location::Av => "AV",
            Location::Pv => "PV",
            Location::Tv => "TV",
            Location::Mv => "MV",
            Location::Phc => "Phc",
            Location::Other => "Other",
        }
    }

    pub fn from_code(code: &str) -> Result<Self, DataError> {
        match code {
            "AV" => Ok(Location::Av),
            "PV" => Ok(Location::Pv),
            "TV" => Ok(Location::Tv),
            "MV" => Ok(Location::Mv),
            "Phc" => Ok(Location::Phc),
            "Other" => Ok(Location::Other),
            other => Err(DataError::UnknownLocationCode(other.to_string())),
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Patient-level murmur annotation. Declaration order is the class order
/// used everywhere: index 0 is the severe class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Murmur {
    Present,
    Unknown,
    Absent,
}

impl Murmur {
    pub fn as_str(self) -> &'static str {
        match self {
            Murmur::Present => "Present",
            Murmur::Unknown => "Unknown",
            Murmur::Absent => "Absent",
        }
    }

    pub fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "Present" => Ok(Murmur::Present),
            "Unknown" => Ok(Murmur::Unknown),
            "Absent" => Ok(Murmur::Absent),
            other => Err(DataError::InvalidAnnotation(format!(
                "unrecognized murmur label `{other}`"
            ))),
        }
    }

    pub fn class_index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Murmur {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Patient-level clinical outcome annotation; index 0 is Abnormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Abnormal,
    Normal,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Abnormal => "Abnormal",
            Outcome::Normal => "Normal",
        }
    }

    pub fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "Abnormal" => Ok(Outcome::Abnormal),
            "Normal" => Ok(Outcome::Normal),
            other => Err(DataError::InvalidAnnotation(format!(
                "unrecognized outcome label `{other}`"
            ))),
        }
    }

    pub fn class_index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One recording of a patient.
///
/// `sample_rate` starts as the rate declared in the metadata header and is
/// replaced by the rate read from the WAV when the audio is probed;
/// `samples` is `None` until then.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingRef {
    pub location: Location,
    pub audio_path: PathBuf,
    pub sample_rate: u32,
    pub samples: Option<u64>,
}

/// One patient: identifier, recordings, and (for 2022-style data) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sample_rate_declared: u32,
    pub recordings: Vec<RecordingRef>,
    pub murmur: Option<Murmur>,
    pub murmur_locations: BTreeSet<Location>,
    pub outcome: Option<Outcome>,
    /// Annotation keys not interpreted by the pipeline, preserved verbatim.
    pub extra_annotations: BTreeMap<String, String>,
}

impl PatientRecord {
    pub fn is_labeled(&self) -> bool {
        self.murmur.is_some() || self.outcome.is_some()
    }

    fn check_invariants(&self) -> Result<(), DataError> {
        if self.recordings.is_empty() {
            return Err(DataError::MalformedHeader(format!(
                "patient {} has no recordings",
                self.patient_id
            )));
        }
        if self.murmur == Some(Murmur::Present) && self.murmur_locations.is_empty() {
            return Err(DataError::ContradictoryLabels(format!(
                "patient {}: murmur Present with no murmur locations",
                self.patient_id
            )));
        }
        let recorded: BTreeSet<Location> = self.recordings.iter().map(|r| r.location).collect();
        for loc in &self.murmur_locations {
            if !recorded.contains(loc) {
                return Err(DataError::ContradictoryLabels(format!(
                    "patient {}: murmur location {} has no recording",
                    self.patient_id, loc
                )));
            }
        }
        Ok(())
    }
}

const MURMUR_KEY: &str = "Murmur";
const MURMUR_LOCATIONS_KEY: &str = "Murmur locations";
const OUTCOME_KEY: &str = "Outcome";

/// Parse one 2022-style patient metadata file.
///
/// Grammar: a header line `ID n_recordings fs`, then one recording line
/// `LOC <name>.hea <name>.wav` per recording, then `#Key: Value` annotation
/// lines. `#Murmur:` and `#Outcome:` are mandatory; `#Murmur locations:`
/// may be `nan` or missing, which yields an empty set. Trailing whitespace
/// and CRLF line endings are tolerated; annotation keys are case-sensitive.
pub fn parse_patient_file(text: &str) -> Result<PatientRecord, DataError> {
    let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());

    let header = lines
        .next()
        .ok_or_else(|| DataError::MalformedHeader("empty file".into()))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(DataError::MalformedHeader(format!(
            "expected `ID n_recordings fs`, got `{header}`"
        )));
    }
    let patient_id = tokens[0].to_string();
    let n_recordings: usize = tokens[1]
        .parse()
        .map_err(|_| DataError::MalformedHeader(format!("bad recording count `{}`", tokens[1])))?;
    let fs: u32 = tokens[2]
        .parse()
        .map_err(|_| DataError::MalformedHeader(format!("bad sample rate `{}`", tokens[2])))?;
    if n_recordings == 0 {
        return Err(DataError::MalformedHeader(format!(
            "patient {patient_id} declares zero recordings"
        )));
    }

    let mut recordings = Vec::with_capacity(n_recordings);
    for _ in 0..n_recordings {
        let line = lines.next().ok_or_else(|| {
            DataError::MalformedLine(format!(
                "expected {n_recordings} recording lines, file ended early"
            ))
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(DataError::MalformedLine(format!(
                "expected `LOC file.hea file.wav`, got `{line}`"
            )));
        }
        recordings.push(RecordingRef {
            location: Location::from_code(toks[0])?,
            audio_path: PathBuf::from(toks[2]),
            sample_rate: fs,
            samples: None,
        });
    }

    let mut annotations: BTreeMap<String, String> = BTreeMap::new();
    for line in lines {
        let body = line.strip_prefix('#').ok_or_else(|| {
            DataError::MalformedLine(format!("expected `#Key: Value`, got `{line}`"))
        })?;
        let (key, value) = body.split_once(':').ok_or_else(|| {
            DataError::MalformedLine(format!("annotation without `:` separator: `{line}`"))
        })?;
        annotations.insert(key.trim().to_string(), value.trim().to_string());
    }

    let murmur_raw = annotations
        .remove(MURMUR_KEY)
        .ok_or_else(|| DataError::MissingMandatoryAnnotation(MURMUR_KEY.into()))?;
    let murmur = Murmur::from_str(&murmur_raw)?;

    let outcome_raw = annotations
        .remove(OUTCOME_KEY)
        .ok_or_else(|| DataError::MissingMandatoryAnnotation(OUTCOME_KEY.into()))?;
    let outcome = Outcome::from_str(&outcome_raw)?;

    let mut murmur_locations = BTreeSet::new();
    if let Some(raw) = annotations.remove(MURMUR_LOCATIONS_KEY) {
        if raw != "nan" && !raw.is_empty() {
            for code in raw.split('+') {
                murmur_locations.insert(Location::from_code(code.trim())?);
            }
        }
    }

    let record = PatientRecord {
        patient_id,
        sample_rate_declared: fs,
        recordings,
        murmur: Some(murmur),
        murmur_locations,
        outcome: Some(outcome),
        extra_annotations: annotations,
    };
    record.check_invariants()?;
    Ok(record)
}

/// Serialize a record back to the metadata grammar. Re-parsing the output
/// yields an equal record (audio probe results are not part of the text).
pub fn format_patient_file(record: &PatientRecord) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {}\n",
        record.patient_id,
        record.recordings.len(),
        record.sample_rate_declared
    ));
    for rec in &record.recordings {
        let wav = rec.audio_path.to_string_lossy();
        let stem = wav.strip_suffix(".wav").unwrap_or(&wav);
        out.push_str(&format!("{} {stem}.hea {wav}\n", rec.location.code()));
    }
    if let Some(m) = record.murmur {
        out.push_str(&format!("#{MURMUR_KEY}: {m}\n"));
    }
    let locs = if record.murmur_locations.is_empty() {
        "nan".to_string()
    } else {
        record
            .murmur_locations
            .iter()
            .map(|l| l.code())
            .collect::<Vec<_>>()
            .join("+")
    };
    out.push_str(&format!("#{MURMUR_LOCATIONS_KEY}: {locs}\n"));
    if let Some(o) = record.outcome {
        out.push_str(&format!("#{OUTCOME_KEY}: {o}\n"));
    }
    for (key, value) in &record.extra_annotations {
        out.push_str(&format!("#{key}: {value}\n"));
    }
    out
}

/// Load all patients of a 2022-style directory, probing each WAV for its
/// actual rate and length. A mismatch against the declared header rate is
/// reported on stderr and the WAV wins.
pub fn load_dir_2022(dir: &Path) -> Result<Vec<PatientRecord>, DataError> {
    let mut txt_files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    txt_files.sort();

    let mut patients = Vec::with_capacity(txt_files.len());
    for txt in txt_files {
        let text = fs::read_to_string(&txt)?;
        let mut record = parse_patient_file(&text).map_err(|e| {
            DataError::MalformedLine(format!("{}: {e}", txt.display()))
        })?;
        for rec in &mut record.recordings {
            let wav_path = dir.join(&rec.audio_path);
            let info = probe_wav(&wav_path)?;
            if info.sample_rate != rec.sample_rate {
                eprintln!(
                    "warning: {}: header declares {} Hz but WAV is {} Hz; using the WAV",
                    wav_path.display(),
                    rec.sample_rate,
                    info.sample_rate
                );
            }
            rec.sample_rate = info.sample_rate;
            rec.samples = Some(info.samples);
        }
        patients.push(record);
    }
    Ok(patients)
}

/// Load a 2016-style directory: a `RECORDS` file with one WAV per line.
/// Each entry becomes an unlabeled single-recording patient at location
/// Other. Entries may omit the `.wav` extension.
pub fn load_dir_2016(dir: &Path) -> Result<Vec<PatientRecord>, DataError> {
    let index = fs::read_to_string(dir.join("RECORDS"))?;
    let mut patients = Vec::new();
    for line in index.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let rel = if line.ends_with(".wav") {
            line.to_string()
        } else {
            format!("{line}.wav")
        };
        let wav_path = dir.join(&rel);
        let info = probe_wav(&wav_path)?;
        let patient_id = rel.trim_end_matches(".wav").replace('/', "_");
        patients.push(PatientRecord {
            patient_id,
            sample_rate_declared: info.sample_rate,
            recordings: vec![RecordingRef {
                location: Location::Other,
                audio_path: PathBuf::from(rel),
                sample_rate: info.sample_rate,
                samples: Some(info.samples),
            }],
            murmur: None,
            murmur_locations: BTreeSet::new(),
            outcome: None,
            extra_annotations: BTreeMap::new(),
        });
    }
    Ok(patients)
}

/// A patient-level split. The three sets are pairwise disjoint and cover
/// the input patients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn split_of(&self, patient_id: &str) -> Option<&'static str> {
        if self.train.contains(patient_id) {
            Some("train")
        } else if self.val.contains(patient_id) {
            Some("val")
        } else if self.test.contains(patient_id) {
            Some("test")
        } else {
            None
        }
    }
}

/// Largest-remainder apportionment of `total` among strata of size `sizes`,
/// capped per stratum by `caps`. Ties go to the earlier stratum.
fn apportion(total: usize, sizes: &[usize], caps: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 || total == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&n| total as f64 * n as f64 / sum as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(&q, &c)| (q.floor() as usize).min(c))
        .collect();
    let mut remaining = total.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut i = 0;
    while remaining > 0 && i < 4 * order.len() {
        let s = order[i % order.len()];
        if alloc[s] < caps[s] {
            alloc[s] += 1;
            remaining -= 1;
        }
        i += 1;
    }
    alloc
}

/// Stratified patient split on the joint (murmur, outcome) label.
///
/// `test_count` patients go to the test set and `val_fraction` of the
/// remainder to validation; each stratum's share of every split is within
/// one patient of exact proportionality. Unlabeled patients (2016-style)
/// are never split: they always land in train. Deterministic per seed.
pub fn stratified_split(
    patients: &[PatientRecord],
    test_count: usize,
    val_fraction: f64,
    split_seed: u64,
) -> Result<SplitAssignment, DataError> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(DataError::InvalidArgument(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let labeled: Vec<&PatientRecord> = patients.iter().filter(|p| p.is_labeled()).collect();
    if test_count >= labeled.len() && !(test_count == 0 && labeled.is_empty()) {
        return Err(DataError::InvalidArgument(format!(
            "test_count {} must be smaller than the labeled patient count {}",
            test_count,
            labeled.len()
        )));
    }

    let mut strata: BTreeMap<(Option<Murmur>, Option<Outcome>), Vec<String>> = BTreeMap::new();
    for p in &labeled {
        strata
            .entry((p.murmur, p.outcome))
            .or_default()
            .push(p.patient_id.clone());
    }
    let keys: Vec<_> = strata.keys().cloned().collect();
    let mut members: Vec<Vec<String>> = Vec::with_capacity(keys.len());
    for (idx, key) in keys.iter().enumerate() {
        let mut ids = strata.remove(key).unwrap();
        ids.sort();
        ids.shuffle(&mut seed::rng(seed::derive_index(
            split_seed,
            "split.stratum",
            idx as u64,
        )));
        members.push(ids);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    let test_alloc = apportion(test_count, &sizes, &sizes);
    let remaining: Vec<usize> = sizes
        .iter()
        .zip(&test_alloc)
        .map(|(&n, &t)| n - t)
        .collect();
    let remaining_total: usize = remaining.iter().sum();
    let val_total = (val_fraction * remaining_total as f64).round() as usize;
    let mut val_alloc = apportion(val_total, &remaining, &remaining);

    // A stratum must keep at least one member for training; move the odd
    // validation slot to the roomiest other stratum when it does not.
    for i in 0..sizes.len() {
        if sizes[i] > 0 && sizes[i] == test_alloc[i] + val_alloc[i] {
            if val_alloc[i] == 0 {
                return Err(DataError::StratumTooSmall(format!(
                    "stratum {:?} fully consumed by the test split",
                    keys[i]
                )));
            }
            let donor = (0..sizes.len())
                .filter(|&j| j != i && remaining[j] > val_alloc[j] + 1)
                .max_by_key(|&j| remaining[j] - val_alloc[j]);
            match donor {
                Some(j) => {
                    val_alloc[i] -= 1;
                    val_alloc[j] += 1;
                }
                None => {
                    return Err(DataError::StratumTooSmall(format!(
                        "stratum {:?} would be left without training members",
                        keys[i]
                    )));
                }
            }
        }
    }

    let mut split = SplitAssignment {
        train: BTreeSet::new(),
        val: BTreeSet::new(),
        test: BTreeSet::new(),
        seed: split_seed,
    };
    for (i, ids) in members.into_iter().enumerate() {
        for (j, id) in ids.into_iter().enumerate() {
            if j < test_alloc[i] {
                split.test.insert(id);
            } else if j < test_alloc[i] + val_alloc[i] {
                split.val.insert(id);
            } else {
                split.train.insert(id);
            }
        }
    }
    for p in patients.iter().filter(|p| !p.is_labeled()) {
        split.train.insert(p.patient_id.clone());
    }
    Ok(split)
}

/// Write the split manifest: one `patient_id<TAB>split` line per patient.
pub fn write_split_manifest(path: &Path, split: &SplitAssignment) -> Result<(), DataError> {
    let mut out = String::new();
    for (set, name) in [
        (&split.train, "train"),
        (&split.val, "val"),
        (&split.test, "test"),
    ] {
        for id in set {
            out.push_str(&format!("{id}\t{name}\n"));
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a split manifest written by [`write_split_manifest`].
pub fn read_split_manifest(path: &Path, manifest_seed: u64) -> Result<SplitAssignment, DataError> {
    let text = fs::read_to_string(path)?;
    let mut split = SplitAssignment {
        train: BTreeSet::new(),
        val: BTreeSet::new(),
        test: BTreeSet::new(),
        seed: manifest_seed,
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (id, name) = line.split_once('\t').ok_or_else(|| {
            DataError::MalformedLine(format!("manifest line without TAB: `{line}`"))
        })?;
        match name.trim() {
            "train" => split.train.insert(id.to_string()),
            "val" => split.val.insert(id.to_string()),
            "test" => split.test.insert(id.to_string()),
            other => {
                return Err(DataError::MalformedLine(format!(
                    "unknown split name `{other}`"
                )))
            }
        };
    }
    Ok(split)
}
