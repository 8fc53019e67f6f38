//! Trial data model, CSV ingestion, analysis-endpoint derivation and
//! baseline summaries.
//!
//! A [`TrialDataset`] is an immutable two-group cohort. Raw datasets come
//! from [`load_trial_csv`], which reads whatever endpoint columns a
//! [`ColumnMapping`] declares; [`derive_endpoints`] then turns the raw
//! ACTG 175 columns into the three analysis endpoints and applies the arm
//! contrast.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment-group label of a subject within a two-group contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Treatment,
    Control,
}

impl Group {
    pub fn swapped(self) -> Self {
        match self {
            Group::Treatment => Group::Control,
            Group::Control => Group::Treatment,
        }
    }

    pub fn is_treatment(self) -> bool {
        self == Group::Treatment
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Treatment => f.write_str("treatment"),
            Group::Control => f.write_str("control"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    TimeToEvent,
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

/// How a missing continuous or binary value is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// The pair is indeterminate at this level and comparison moves on.
    #[default]
    TieAtLevel,
    /// Subjects missing the value are dropped before analysis.
    CompleteCase,
}

/// Declaration of one endpoint.
///
/// Time-to-event endpoints always use `HigherIsBetter`: a later event (or
/// longer event-free follow-up) is the better outcome, and that meaning is
/// carried by the kind rather than the direction flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub name: String,
    pub kind: EndpointKind,
    pub direction: Direction,
    /// 1 is compared first.
    pub priority: u32,
    pub missing_policy: MissingPolicy,
}

impl EndpointSpec {
    pub fn time_to_event(name: impl Into<String>, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: EndpointKind::TimeToEvent,
            direction: Direction::HigherIsBetter,
            priority,
            missing_policy: MissingPolicy::TieAtLevel,
        }
    }

    pub fn continuous(name: impl Into<String>, direction: Direction, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: EndpointKind::Continuous,
            direction,
            priority,
            missing_policy: MissingPolicy::TieAtLevel,
        }
    }

    pub fn binary(name: impl Into<String>, direction: Direction, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: EndpointKind::Binary,
            direction,
            priority,
            missing_policy: MissingPolicy::TieAtLevel,
        }
    }

    pub fn with_missing_policy(mut self, policy: MissingPolicy) -> Self {
        self.missing_policy = policy;
        self
    }

    pub fn higher_is_better(&self) -> bool {
        self.direction == Direction::HigherIsBetter
    }
}

/// Checks that a set of endpoint declarations forms a valid hierarchy:
/// unique names, priorities distinct and contiguous from 1, and no
/// time-to-event endpoint flagged `LowerIsBetter`.
pub fn validate_hierarchy(specs: &[EndpointSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidEndpoint("hierarchy is empty".into()));
    }
    let mut names = HashSet::new();
    for spec in specs {
        if !names.insert(spec.name.as_str()) {
            return Err(Error::InvalidEndpoint(format!(
                "endpoint `{}` declared twice",
                spec.name
            )));
        }
        if spec.kind == EndpointKind::TimeToEvent && spec.direction == Direction::LowerIsBetter {
            return Err(Error::InvalidEndpoint(format!(
                "time-to-event endpoint `{}` cannot be LowerIsBetter",
                spec.name
            )));
        }
    }
    let mut priorities: Vec<u32> = specs.iter().map(|s| s.priority).collect();
    priorities.sort_unstable();
    for (expected, got) in (1u32..).zip(&priorities) {
        if *got != expected {
            return Err(Error::InvalidEndpoint(format!(
                "priorities must be distinct and contiguous from 1, got {priorities:?}"
            )));
        }
    }
    Ok(())
}

/// Returns the specs sorted by priority, after validating them.
pub fn ordered_hierarchy(specs: &[EndpointSpec]) -> Result<Vec<EndpointSpec>> {
    validate_hierarchy(specs)?;
    let mut ordered = specs.to_vec();
    ordered.sort_by_key(|s| s.priority);
    Ok(ordered)
}

/// One subject's value for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutcomeValue {
    /// Follow-up time in days, and whether the event was observed at that
    /// time (`false` means censored).
    TimeToEvent { time: f64, event_observed: bool },
    Continuous(Option<f64>),
    Binary(Option<bool>),
}

impl OutcomeValue {
    pub fn kind(&self) -> EndpointKind {
        match self {
            OutcomeValue::TimeToEvent { .. } => EndpointKind::TimeToEvent,
            OutcomeValue::Continuous(_) => EndpointKind::Continuous,
            OutcomeValue::Binary(_) => EndpointKind::Binary,
        }
    }

    pub fn is_present(&self) -> bool {
        match self {
            OutcomeValue::TimeToEvent { .. } => true,
            OutcomeValue::Continuous(v) => v.is_some(),
            OutcomeValue::Binary(v) => v.is_some(),
        }
    }

    /// Numeric value of a continuous or binary outcome, `None` when missing
    /// or for time-to-event outcomes.
    pub fn numeric(&self) -> Option<f64> {
        match *self {
            OutcomeValue::TimeToEvent { .. } => None,
            OutcomeValue::Continuous(v) => v,
            OutcomeValue::Binary(v) => v.map(|b| if b { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Source arm code as it appears in the data file.
    pub arm: String,
    pub group: Group,
    pub outcomes: BTreeMap<String, OutcomeValue>,
    pub covariates: BTreeMap<String, f64>,
}

impl Subject {
    pub fn outcome(&self, endpoint: &str) -> Option<&OutcomeValue> {
        self.outcomes.get(endpoint)
    }

    pub fn covariate(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).copied()
    }
}

/// Immutable two-group cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    subjects: Vec<Subject>,
    endpoint_specs: Vec<EndpointSpec>,
    n_treatment: usize,
    n_control: usize,
}

impl TrialDataset {
    pub fn new(subjects: Vec<Subject>, endpoint_specs: Vec<EndpointSpec>) -> Result<Self> {
        validate_hierarchy(&endpoint_specs)?;
        let mut ids = HashSet::with_capacity(subjects.len());
        for subject in &subjects {
            if !ids.insert(subject.id.as_str()) {
                return Err(Error::DuplicateSubject(subject.id.clone()));
            }
            if subject.outcomes.len() != endpoint_specs.len() {
                return Err(Error::InvalidEndpoint(format!(
                    "subject `{}` has {} outcomes for {} declared endpoints",
                    subject.id,
                    subject.outcomes.len(),
                    endpoint_specs.len()
                )));
            }
            for spec in &endpoint_specs {
                let value = subject.outcomes.get(&spec.name).ok_or_else(|| {
                    Error::HierarchyMismatch {
                        subject: subject.id.clone(),
                        endpoint: spec.name.clone(),
                    }
                })?;
                check_outcome(&subject.id, spec, value)?;
            }
        }
        let n_treatment = subjects.iter().filter(|s| s.group.is_treatment()).count();
        let n_control = subjects.len() - n_treatment;
        if n_treatment == 0 {
            return Err(Error::EmptyGroup(Group::Treatment));
        }
        if n_control == 0 {
            return Err(Error::EmptyGroup(Group::Control));
        }
        Ok(Self {
            subjects,
            endpoint_specs,
            n_treatment,
            n_control,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn endpoint_specs(&self) -> &[EndpointSpec] {
        &self.endpoint_specs
    }

    pub fn n_treatment(&self) -> usize {
        self.n_treatment
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    /// Always false: a valid dataset has at least one subject per group.
    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn spec(&self, endpoint: &str) -> Option<&EndpointSpec> {
        self.endpoint_specs.iter().find(|s| s.name == endpoint)
    }

    /// Endpoint specs in priority order.
    pub fn hierarchy(&self) -> Vec<EndpointSpec> {
        let mut specs = self.endpoint_specs.clone();
        specs.sort_by_key(|s| s.priority);
        specs
    }

    /// Looks up specs by name, preserving the requested order.
    pub fn specs_for(&self, names: &[String]) -> Result<Vec<EndpointSpec>> {
        names
            .iter()
            .map(|n| {
                self.spec(n)
                    .cloned()
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect()
    }

    pub fn groups(&self) -> Vec<Group> {
        self.subjects.iter().map(|s| s.group).collect()
    }

    /// `true` at position i when subject i is in the treatment group.
    pub fn treatment_mask(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.group.is_treatment()).collect()
    }

    /// A copy of the dataset with group labels replaced.
    pub fn relabeled(&self, groups: &[Group]) -> Result<Self> {
        if groups.len() != self.subjects.len() {
            return Err(Error::InvalidEndpoint(format!(
                "{} labels supplied for {} subjects",
                groups.len(),
                self.subjects.len()
            )));
        }
        let subjects = self
            .subjects
            .iter()
            .zip(groups)
            .map(|(s, &g)| Subject {
                group: g,
                ..s.clone()
            })
            .collect();
        Self::new(subjects, self.endpoint_specs.clone())
    }

    pub fn with_swapped_labels(&self) -> Self {
        let groups: Vec<Group> = self.subjects.iter().map(|s| s.group.swapped()).collect();
        self.relabeled(&groups)
            .expect("swapping labels keeps both groups nonempty")
    }

    /// Drops subjects missing any of the named endpoints. Returns the
    /// reduced dataset and the number of excluded subjects.
    pub fn complete_cases(&self, endpoints: &[String]) -> Result<(Self, usize)> {
        for name in endpoints {
            if self.spec(name).is_none() {
                return Err(Error::MissingColumn(name.clone()));
            }
        }
        let kept: Vec<Subject> = self
            .subjects
            .iter()
            .filter(|s| endpoints.iter().all(|e| s.outcomes[e].is_present()))
            .cloned()
            .collect();
        let excluded = self.subjects.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::EmptyAfterExclusion);
        }
        Ok((Self::new(kept, self.endpoint_specs.clone())?, excluded))
    }

    /// Applies complete-case exclusion for every hierarchy endpoint whose
    /// missing policy is `CompleteCase`.
    pub(crate) fn apply_missing_policies(&self, hierarchy: &[EndpointSpec]) -> Result<(Self, usize)> {
        let cc: Vec<String> = hierarchy
            .iter()
            .filter(|s| s.missing_policy == MissingPolicy::CompleteCase)
            .map(|s| s.name.clone())
            .collect();
        if cc.is_empty() {
            return Ok((self.clone(), 0));
        }
        self.complete_cases(&cc)
    }
}

fn check_outcome(subject: &str, spec: &EndpointSpec, value: &OutcomeValue) -> Result<()> {
    if value.kind() != spec.kind {
        return Err(Error::HierarchyMismatch {
            subject: subject.to_string(),
            endpoint: spec.name.clone(),
        });
    }
    let ok = match *value {
        OutcomeValue::TimeToEvent { time, .. } => time.is_finite() && time >= 0.0,
        OutcomeValue::Continuous(Some(v)) => v.is_finite(),
        _ => true,
    };
    if !ok {
        return Err(Error::InvalidEndpoint(format!(
            "subject `{subject}` has an invalid value for `{}`",
            spec.name
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Where an endpoint's values live in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndpointColumns {
    TimeToEvent {
        name: String,
        time: String,
        /// 1 = event observed, 0 = censored at `time`.
        event: String,
    },
    Continuous {
        name: String,
        column: String,
        #[serde(default)]
        direction: Direction,
        #[serde(default)]
        missing_policy: MissingPolicy,
    },
    Binary {
        name: String,
        column: String,
        #[serde(default)]
        direction: Direction,
        #[serde(default)]
        missing_policy: MissingPolicy,
    },
}

impl EndpointColumns {
    pub fn name(&self) -> &str {
        match self {
            EndpointColumns::TimeToEvent { name, .. }
            | EndpointColumns::Continuous { name, .. }
            | EndpointColumns::Binary { name, .. } => name,
        }
    }

    fn columns(&self) -> Vec<&str> {
        match self {
            EndpointColumns::TimeToEvent { time, event, .. } => vec![time, event],
            EndpointColumns::Continuous { column, .. } | EndpointColumns::Binary { column, .. } => {
                vec![column]
            }
        }
    }

    fn spec(&self, priority: u32) -> EndpointSpec {
        match self {
            EndpointColumns::TimeToEvent { name, .. } => EndpointSpec::time_to_event(name, priority),
            EndpointColumns::Continuous {
                name,
                direction,
                missing_policy,
                ..
            } => EndpointSpec::continuous(name, *direction, priority).with_missing_policy(*missing_policy),
            EndpointColumns::Binary {
                name,
                direction,
                missing_policy,
                ..
            } => EndpointSpec::binary(name, *direction, priority).with_missing_policy(*missing_policy),
        }
    }
}

/// Maps file columns onto subjects. Defaults follow the publicly
/// distributed ACTG 175 table (`pidnum`, `arms`, `days`, `cens`, `cd40`,
/// `cd420`, `cd496`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub id: String,
    pub arm: String,
    /// Arm codes loaded as treatment. Rows whose arm is in neither list
    /// are skipped.
    pub treatment_arms: Vec<String>,
    pub control_arms: Vec<String>,
    /// Endpoint columns; declaration order sets priority.
    pub endpoints: Vec<EndpointColumns>,
    pub covariates: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        let continuous = |name: &str, column: &str| EndpointColumns::Continuous {
            name: name.into(),
            column: column.into(),
            direction: Direction::HigherIsBetter,
            missing_policy: MissingPolicy::TieAtLevel,
        };
        Self {
            id: "pidnum".into(),
            arm: "arms".into(),
            treatment_arms: vec!["1".into(), "2".into(), "3".into()],
            control_arms: vec!["0".into()],
            endpoints: vec![
                EndpointColumns::TimeToEvent {
                    name: "event".into(),
                    time: "days".into(),
                    event: "cens".into(),
                },
                continuous("cd4_0", "cd40"),
                continuous("cd4_20", "cd420"),
                continuous("cd4_96", "cd496"),
            ],
            covariates: [
                "age", "wtkg", "gender", "race", "homo", "drugs", "hemo", "karnof", "symptom",
                "str2", "cd40", "cd80",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl ColumnMapping {
    /// A mapping that writes and re-reads every endpoint and covariate of
    /// `ds` under generated column names.
    pub fn for_dataset(ds: &TrialDataset) -> Result<Self> {
        let mut treatment = BTreeSet::new();
        let mut control = BTreeSet::new();
        for s in ds.subjects() {
            match s.group {
                Group::Treatment => treatment.insert(s.arm.clone()),
                Group::Control => control.insert(s.arm.clone()),
            };
        }
        if let Some(arm) = treatment.intersection(&control).next() {
            return Err(Error::config(
                "arm",
                format!("arm `{arm}` appears in both groups; labels cannot be recovered from arms"),
            ));
        }
        let endpoints = ds
            .hierarchy()
            .into_iter()
            .map(|spec| match spec.kind {
                EndpointKind::TimeToEvent => EndpointColumns::TimeToEvent {
                    time: format!("{}_time", spec.name),
                    event: format!("{}_event", spec.name),
                    name: spec.name,
                },
                EndpointKind::Continuous => EndpointColumns::Continuous {
                    column: spec.name.clone(),
                    name: spec.name,
                    direction: spec.direction,
                    missing_policy: spec.missing_policy,
                },
                EndpointKind::Binary => EndpointColumns::Binary {
                    column: spec.name.clone(),
                    name: spec.name,
                    direction: spec.direction,
                    missing_policy: spec.missing_policy,
                },
            })
            .collect();
        let covariates: BTreeSet<String> = ds
            .subjects()
            .iter()
            .flat_map(|s| s.covariates.keys().cloned())
            .collect();
        Ok(Self {
            id: "id".into(),
            arm: "arm".into(),
            treatment_arms: treatment.into_iter().collect(),
            control_arms: control.into_iter().collect(),
            endpoints,
            covariates: covariates.into_iter().collect(),
        })
    }
}

const MISSING_TOKENS: [&str; 5] = ["", "NA", "na", "NaN", "."];

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell)
}

struct RowReader<'a> {
    row: usize,
    record: &'a csv::StringRecord,
    index: &'a BTreeMap<&'a str, usize>,
}

impl RowReader<'_> {
    fn cell(&self, column: &str) -> &str {
        self.record.get(self.index[column]).unwrap_or("").trim()
    }

    fn err(&self, column: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            row: self.row,
            column: column.to_string(),
            message: message.into(),
        }
    }

    fn required_number(&self, column: &str) -> Result<f64> {
        let cell = self.cell(column);
        if is_missing(cell) {
            return Err(self.err(column, "required value is missing"));
        }
        self.number(column, cell)
    }

    fn optional_number(&self, column: &str) -> Result<Option<f64>> {
        let cell = self.cell(column);
        if is_missing(cell) {
            return Ok(None);
        }
        self.number(column, cell).map(Some)
    }

    fn number(&self, column: &str, cell: &str) -> Result<f64> {
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(column, format!("`{cell}` is not a finite number"))),
        }
    }

    fn indicator(&self, column: &str, cell: &str) -> Result<bool> {
        match cell {
            "1" | "1.0" | "true" | "TRUE" => Ok(true),
            "0" | "0.0" | "false" | "FALSE" => Ok(false),
            _ => Err(self.err(column, format!("`{cell}` is not a 0/1 indicator"))),
        }
    }
}

/// Reads a trial table. Rows with arms outside the mapping's treatment and
/// control lists are skipped; missing optional outcome cells become absent
/// values.
pub fn load_trial_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<TrialDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    read_trial(reader, mapping)
}

/// Same as [`load_trial_csv`] for an in-memory reader.
pub fn read_trial_csv<R: std::io::Read>(input: R, mapping: &ColumnMapping) -> Result<TrialDataset> {
    let reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    read_trial(reader, mapping)
}

fn read_trial<R: std::io::Read>(mut reader: csv::Reader<R>, mapping: &ColumnMapping) -> Result<TrialDataset> {
    if mapping.endpoints.is_empty() {
        return Err(Error::config("mapping.endpoints", "no endpoints declared"));
    }
    let headers = reader.headers()?.clone();
    let mut index = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        index.insert(h, i);
    }
    let mut needed: Vec<&str> = vec![&mapping.id, &mapping.arm];
    for e in &mapping.endpoints {
        needed.extend(e.columns());
    }
    needed.extend(mapping.covariates.iter().map(String::as_str));
    for column in needed {
        if !index.contains_key(column) {
            return Err(Error::SchemaMismatch(column.to_string()));
        }
    }

    let specs: Vec<EndpointSpec> = mapping
        .endpoints
        .iter()
        .zip(1u32..)
        .map(|(e, p)| e.spec(p))
        .collect();

    let mut subjects = Vec::new();
    for (row0, record) in reader.records().enumerate() {
        let record = record?;
        let row = RowReader {
            row: row0 + 1,
            record: &record,
            index: &index,
        };
        let arm = row.cell(&mapping.arm).to_string();
        let group = if mapping.treatment_arms.contains(&arm) {
            Group::Treatment
        } else if mapping.control_arms.contains(&arm) {
            Group::Control
        } else {
            continue;
        };
        let id = row.cell(&mapping.id);
        if id.is_empty() {
            return Err(row.err(&mapping.id, "subject id is empty"));
        }

        let mut outcomes = BTreeMap::new();
        for e in &mapping.endpoints {
            let value = match e {
                EndpointColumns::TimeToEvent { time, event, .. } => {
                    let t = row.required_number(time)?;
                    if t < 0.0 {
                        return Err(row.err(time, "time must be non-negative"));
                    }
                    let cell = row.cell(event);
                    if is_missing(cell) {
                        return Err(row.err(event, "required value is missing"));
                    }
                    OutcomeValue::TimeToEvent {
                        time: t,
                        event_observed: row.indicator(event, cell)?,
                    }
                }
                EndpointColumns::Continuous { column, .. } => {
                    OutcomeValue::Continuous(row.optional_number(column)?)
                }
                EndpointColumns::Binary { column, .. } => {
                    let cell = row.cell(column);
                    if is_missing(cell) {
                        OutcomeValue::Binary(None)
                    } else {
                        OutcomeValue::Binary(Some(row.indicator(column, cell)?))
                    }
                }
            };
            outcomes.insert(e.name().to_string(), value);
        }

        let mut covariates = BTreeMap::new();
        for c in &mapping.covariates {
            if let Some(v) = row.optional_number(c)? {
                covariates.insert(c.clone(), v);
            }
        }
        subjects.push(Subject {
            id: id.to_string(),
            arm,
            group,
            outcomes,
            covariates,
        });
    }
    TrialDataset::new(subjects, specs)
}

/// Writes `ds` in the layout described by `mapping`. Reloading with the
/// same mapping reproduces the dataset.
pub fn write_trial_csv<W: Write>(ds: &TrialDataset, mapping: &ColumnMapping, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec![&mapping.id, &mapping.arm];
    for e in &mapping.endpoints {
        header.extend(e.columns());
    }
    header.extend(mapping.covariates.iter().map(String::as_str));
    w.write_record(&header)?;

    for s in ds.subjects() {
        let mut record = vec![s.id.clone(), s.arm.clone()];
        for e in &mapping.endpoints {
            let value = s
                .outcome(e.name())
                .ok_or_else(|| Error::MissingColumn(e.name().to_string()))?;
            match (e, value) {
                (EndpointColumns::TimeToEvent { .. }, OutcomeValue::TimeToEvent { time, event_observed }) => {
                    record.push(time.to_string());
                    record.push(if *event_observed { "1" } else { "0" }.into());
                }
                (EndpointColumns::Continuous { .. }, OutcomeValue::Continuous(v)) => {
                    record.push(v.map_or_else(|| "NA".into(), |v| v.to_string()));
                }
                (EndpointColumns::Binary { .. }, OutcomeValue::Binary(v)) => {
                    record.push(v.map_or_else(|| "NA".into(), |b| if b { "1" } else { "0" }.into()));
                }
                _ => {
                    return Err(Error::HierarchyMismatch {
                        subject: s.id.clone(),
                        endpoint: e.name().to_string(),
                    })
                }
            }
        }
        for c in &mapping.covariates {
            record.push(s.covariate(c).map_or_else(|| "NA".into(), |v| v.to_string()));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Endpoint derivation
// ---------------------------------------------------------------------------

pub const COMPOSITE_EVENT: &str = "composite_event";
pub const CD4_CHANGE_20WK: &str = "cd4_change_20wk";
pub const CD4_96WK: &str = "cd4_96wk";

/// Two-group arm contrast: which source arms are pooled into each group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contrast {
    pub treatment: Vec<String>,
    pub control: Vec<String>,
}

impl Default for Contrast {
    /// Combination arms (1, 2, 3) pooled against zidovudine monotherapy (0).
    fn default() -> Self {
        Self {
            treatment: vec!["1".into(), "2".into(), "3".into()],
            control: vec!["0".into()],
        }
    }
}

impl Contrast {
    /// Parses `"1,2,3:0"` (treatment arms, colon, control arms). The name
    /// `default` selects [`Contrast::default`].
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "default" {
            return Ok(Self::default());
        }
        let (t, c) = s
            .split_once(':')
            .ok_or_else(|| Error::config("contrast", format!("expected `T1,T2:C1`, got `{s}`")))?;
        let list = |part: &str| -> Vec<String> {
            part.split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from)
                .collect()
        };
        let contrast = Self {
            treatment: list(t),
            control: list(c),
        };
        contrast.validate()?;
        Ok(contrast)
    }

    pub fn validate(&self) -> Result<()> {
        if self.treatment.is_empty() || self.control.is_empty() {
            return Err(Error::config("contrast", "both sides need at least one arm"));
        }
        if let Some(a) = self.treatment.iter().find(|a| self.control.contains(a)) {
            return Err(Error::config("contrast", format!("arm `{a}` is on both sides")));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{} vs {}", self.treatment.join("+"), self.control.join("+"))
    }
}

/// Names of the raw columns feeding the analysis endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivationConfig {
    pub event: String,
    pub cd4_baseline: String,
    pub cd4_week20: String,
    pub cd4_week96: String,
    pub contrast: Contrast,
    /// Missing policy attached to the two CD4 endpoints.
    pub missing_policy: MissingPolicy,
}

impl Default for DerivationConfig {
    fn default() -> Self {
        Self {
            event: "event".into(),
            cd4_baseline: "cd4_0".into(),
            cd4_week20: "cd4_20".into(),
            cd4_week96: "cd4_96".into(),
            contrast: Contrast::default(),
            missing_policy: MissingPolicy::TieAtLevel,
        }
    }
}

/// Builds the analysis endpoints from a raw dataset:
///
/// 1. `composite_event`: the composite progression event, time-to-event.
/// 2. `cd4_change_20wk`: week-20 CD4 minus baseline CD4, higher is better.
/// 3. `cd4_96wk`: week-96 CD4, higher is better, often missing.
///
/// Subjects are regrouped by the configured contrast; arms outside it are
/// dropped.
pub fn derive_endpoints(raw: &TrialDataset, cfg: &DerivationConfig) -> Result<TrialDataset> {
    cfg.contrast.validate()?;
    let require = |name: &str, kind: EndpointKind| -> Result<()> {
        match raw.spec(name) {
            Some(s) if s.kind == kind => Ok(()),
            _ => Err(Error::MissingColumn(name.to_string())),
        }
    };
    require(&cfg.event, EndpointKind::TimeToEvent)?;
    require(&cfg.cd4_baseline, EndpointKind::Continuous)?;
    require(&cfg.cd4_week20, EndpointKind::Continuous)?;
    require(&cfg.cd4_week96, EndpointKind::Continuous)?;

    let arms: HashSet<&str> = raw.subjects().iter().map(|s| s.arm.as_str()).collect();
    for side in [&cfg.contrast.treatment, &cfg.contrast.control] {
        if !side.iter().any(|a| arms.contains(a.as_str())) {
            return Err(Error::InvalidContrast(side.join(",")));
        }
    }

    let specs = vec![
        EndpointSpec::time_to_event(COMPOSITE_EVENT, 1),
        EndpointSpec::continuous(CD4_CHANGE_20WK, Direction::HigherIsBetter, 2)
            .with_missing_policy(cfg.missing_policy),
        EndpointSpec::continuous(CD4_96WK, Direction::HigherIsBetter, 3)
            .with_missing_policy(cfg.missing_policy),
    ];

    let mut subjects = Vec::with_capacity(raw.len());
    for s in raw.subjects() {
        let group = if cfg.contrast.treatment.contains(&s.arm) {
            Group::Treatment
        } else if cfg.contrast.control.contains(&s.arm) {
            Group::Control
        } else {
            continue;
        };
        let baseline = s.outcomes[&cfg.cd4_baseline].numeric();
        let week20 = s.outcomes[&cfg.cd4_week20].numeric();
        let change = match (baseline, week20) {
            (Some(b), Some(w)) => Some(w - b),
            _ => None,
        };
        let mut outcomes = BTreeMap::new();
        outcomes.insert(COMPOSITE_EVENT.to_string(), s.outcomes[&cfg.event]);
        outcomes.insert(CD4_CHANGE_20WK.to_string(), OutcomeValue::Continuous(change));
        outcomes.insert(
            CD4_96WK.to_string(),
            OutcomeValue::Continuous(s.outcomes[&cfg.cd4_week96].numeric()),
        );
        subjects.push(Subject {
            id: s.id.clone(),
            arm: s.arm.clone(),
            group,
            outcomes,
            covariates: s.covariates.clone(),
        });
    }
    TrialDataset::new(subjects, specs)
}

// ---------------------------------------------------------------------------
// Baseline summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagColumn {
    pub label: String,
    pub column: String,
}

/// Covariate columns used by [`baseline_summary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// 0 = no prior antiretroviral exposure, 1 = prior exposure.
    pub prior_exposure: String,
    pub sex: String,
    pub male_code: f64,
    pub age: String,
    pub race: String,
    /// Race code (as an integer string) to row label.
    pub race_labels: BTreeMap<String, String>,
    pub risk_factors: Vec<FlagColumn>,
    pub karnofsky: String,
    pub symptomatic: String,
    pub cd4: String,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        let flag = |label: &str, column: &str| FlagColumn {
            label: label.into(),
            column: column.into(),
        };
        Self {
            prior_exposure: "str2".into(),
            sex: "gender".into(),
            male_code: 1.0,
            age: "age".into(),
            race: "race".into(),
            race_labels: [("0", "White"), ("1", "Non-white")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            risk_factors: vec![
                flag("Homosexuality", "homo"),
                flag("Injection-drug use", "drugs"),
                flag("Hemophilia", "hemo"),
            ],
            karnofsky: "karnof".into(),
            symptomatic: "symptom".into(),
            cd4: "cd40".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryStat {
    Count,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub stat: SummaryStat,
    /// One value per column; `None` when the covariate is unavailable.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    /// Column label and subject count.
    pub columns: Vec<(String, usize)>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn value(&self, label: &str, column: usize) -> Option<f64> {
        self.row(label).and_then(|r| r.values.get(column).copied().flatten())
    }

    fn cell(stat: SummaryStat, v: Option<f64>) -> String {
        match (stat, v) {
            (_, None) => "NA".into(),
            (SummaryStat::Count, Some(v)) => format!("{v:.0}"),
            (SummaryStat::Mean, Some(v)) => format!("{v:.1}"),
        }
    }

    pub fn to_text(&self) -> String {
        let headers: Vec<String> = std::iter::once("Characteristic".to_string())
            .chain(self.columns.iter().map(|(l, n)| format!("{l} (N={n})")))
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.label.clone())
                    .chain(r.values.iter().map(|v| Self::cell(r.stat, *v)))
                    .collect()
            })
            .collect();
        render_aligned(&headers, &body)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["characteristic".to_string(), "statistic".to_string()];
        header.extend(self.columns.iter().map(|(l, n)| format!("{l} (N={n})")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.label.clone(),
                match r.stat {
                    SummaryStat::Count => "count".into(),
                    SummaryStat::Mean => "mean".into(),
                },
            ];
            rec.extend(r.values.iter().map(|v| v.map_or_else(|| "NA".into(), |v| v.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Left-aligned first column, right-aligned numeric columns.
pub(crate) fn render_aligned(headers: &[String], body: &[Vec<String>]) -> String {
    let ncol = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate().take(ncol) {
            if i == 0 {
                line.push_str(&format!("{:<w$}", cell, w = widths[0]));
            } else {
                line.push_str(&format!("  {:>w$}", cell, w = widths[i]));
            }
        }
        line.trim_end().to_string()
    };
    let mut out = fmt_row(headers);
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (ncol - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in body {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

/// Baseline characteristics of a cohort, overall and split by prior
/// antiretroviral exposure.
pub fn baseline_summary(ds: &TrialDataset, cfg: &SummaryConfig) -> SummaryTable {
    summarize_subjects(ds.subjects(), cfg)
}

/// [`baseline_summary`] over a bare list of subjects (no group
/// requirements).
pub fn summarize_subjects(subjects: &[Subject], cfg: &SummaryConfig) -> SummaryTable {
    let all: Vec<&Subject> = subjects.iter().collect();
    let naive: Vec<&Subject> = subjects
        .iter()
        .filter(|s| s.covariate(&cfg.prior_exposure) == Some(0.0))
        .collect();
    let experienced: Vec<&Subject> = subjects
        .iter()
        .filter(|s| matches!(s.covariate(&cfg.prior_exposure), Some(v) if v != 0.0))
        .collect();
    let strata = [all, naive, experienced];
    let columns = vec![
        ("All Patients".to_string(), strata[0].len()),
        ("No Prior Exposure".to_string(), strata[1].len()),
        ("Prior Exposure".to_string(), strata[2].len()),
    ];

    let available = |column: &str| subjects.iter().any(|s| s.covariate(column).is_some());
    let count_row = |label: &str, column: &str, pred: &dyn Fn(f64) -> bool| SummaryRow {
        label: label.to_string(),
        stat: SummaryStat::Count,
        values: strata
            .iter()
            .map(|st| {
                available(column).then(|| {
                    st.iter()
                        .filter(|s| s.covariate(column).is_some_and(pred))
                        .count() as f64
                })
            })
            .collect(),
    };
    let mean_row = |label: &str, column: &str| SummaryRow {
        label: label.to_string(),
        stat: SummaryStat::Mean,
        values: strata
            .iter()
            .map(|st| {
                let vals: Vec<f64> = st.iter().filter_map(|s| s.covariate(column)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect(),
    };

    let mut rows = vec![SummaryRow {
        label: "N".into(),
        stat: SummaryStat::Count,
        values: strata.iter().map(|st| Some(st.len() as f64)).collect(),
    }];
    let male = cfg.male_code;
    rows.push(count_row("Male sex", &cfg.sex, &|v| v == male));
    rows.push(mean_row("Age", &cfg.age));
    for (code, label) in &cfg.race_labels {
        let code: f64 = code.parse().unwrap_or(f64::NAN);
        rows.push(count_row(label, &cfg.race, &|v| v == code));
    }
    for rf in &cfg.risk_factors {
        rows.push(count_row(&rf.label, &rf.column, &|v| v != 0.0));
    }
    rows.push(count_row("Karnofsky score of 100", &cfg.karnofsky, &|v| v == 100.0));
    rows.push(count_row("Symptomatic HIV infection", &cfg.symptomatic, &|v| v != 0.0));
    rows.push(mean_row("CD4 cell count", &cfg.cd4));
    SummaryTable { columns, rows }
}
