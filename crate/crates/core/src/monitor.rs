//! Append-only monitoring of arrivals, resources and attributes, with a
//! lossless CSV export.
//!
//! Rows are stored compactly (names interned) and expanded into the public
//! record types on demand.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, SimError};
use crate::SimTime;

pub const ARRIVALS_FILE: &str = "arrivals.csv";
pub const RESOURCES_FILE: &str = "resources.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";

const ARRIVALS_HEADER: [&str; 7] = [
    "name",
    "start_time",
    "end_time",
    "activity_time",
    "finished",
    "resource",
    "replication",
];
const RESOURCES_HEADER: [&str; 7] = [
    "resource",
    "time",
    "server",
    "queue",
    "capacity",
    "queue_size",
    "replication",
];
const ATTRIBUTES_HEADER: [&str; 5] = ["time", "name", "key", "value", "replication"];

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalRecord {
    pub name: String,
    pub start_time: SimTime,
    pub end_time: SimTime,
    pub activity_time: SimTime,
    pub finished: bool,
    /// Empty for lifecycle records.
    pub resource: String,
    pub replication: u32,
}

impl ArrivalRecord {
    pub fn is_lifecycle(&self) -> bool {
        self.resource.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceRecord {
    pub resource: String,
    pub time: SimTime,
    pub server: u64,
    pub queue: u64,
    pub capacity: u64,
    /// `None` is an unbounded queue.
    pub queue_size: Option<u64>,
    pub replication: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRecord {
    pub time: SimTime,
    /// Empty for global attributes.
    pub name: String,
    pub key: String,
    pub value: f64,
    pub replication: u32,
}

#[derive(Debug, Clone, Copy)]
struct ArrivalRow {
    name: u32,
    resource: u32,
    start: SimTime,
    end: SimTime,
    activity: SimTime,
    finished: bool,
}

#[derive(Debug, Clone, Copy)]
struct ResourceRow {
    resource: u32,
    time: SimTime,
    server: u64,
    queue: u64,
    capacity: u64,
    queue_size: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
struct AttributeRow {
    time: SimTime,
    name: u32,
    key: u32,
    value: f64,
}

/// Interns strings to dense ids.
#[derive(Debug, Clone, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_owned());
        self.index.insert(s.to_owned(), id);
        id
    }

    fn get(&self, s: &str) -> Option<u32> {
        self.index.get(s).copied()
    }

    fn resolve(&self, id: u32) -> &str {
        if id == NONE {
            ""
        } else {
            &self.names[id as usize]
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MonitorStore {
    replication: u32,
    arrival_names: Vec<String>,
    resources: Interner,
    keys: Interner,
    lifecycle: Vec<ArrivalRow>,
    visits: Vec<ArrivalRow>,
    resource_rows: Vec<ResourceRow>,
    attribute_rows: Vec<AttributeRow>,
}

impl MonitorStore {
    pub fn new(replication: u32) -> Self {
        Self {
            replication,
            ..Self::default()
        }
    }

    pub fn replication(&self) -> u32 {
        self.replication
    }

    pub fn set_replication(&mut self, replication: u32) {
        self.replication = replication;
    }

    pub(crate) fn add_arrival_name(&mut self, name: String) -> u32 {
        let id = self.arrival_names.len() as u32;
        self.arrival_names.push(name);
        id
    }

    pub(crate) fn arrival_name(&self, id: u32) -> &str {
        &self.arrival_names[id as usize]
    }

    pub(crate) fn resource_id(&mut self, name: &str) -> u32 {
        self.resources.intern(name)
    }

    pub(crate) fn key_id(&mut self, key: &str) -> u32 {
        self.keys.intern(key)
    }

    pub(crate) fn lookup_key(&self, key: &str) -> Option<u32> {
        self.keys.get(key)
    }

    pub(crate) fn record_lifecycle(
        &mut self,
        name: u32,
        start: SimTime,
        end: SimTime,
        activity: SimTime,
        finished: bool,
    ) {
        self.lifecycle.push(ArrivalRow {
            name,
            resource: NONE,
            start,
            end,
            activity,
            finished,
        });
    }

    pub(crate) fn record_visit(
        &mut self,
        name: u32,
        resource: u32,
        start: SimTime,
        end: SimTime,
        activity: SimTime,
        finished: bool,
    ) {
        self.visits.push(ArrivalRow {
            name,
            resource,
            start,
            end,
            activity,
            finished,
        });
    }

    pub(crate) fn record_resource(
        &mut self,
        resource: u32,
        time: SimTime,
        server: u64,
        queue: u64,
        capacity: u64,
        queue_size: Option<u64>,
    ) {
        self.resource_rows.push(ResourceRow {
            resource,
            time,
            server,
            queue,
            capacity,
            queue_size,
        });
    }

    /// `name` is `None` for global attributes.
    pub(crate) fn record_attribute(&mut self, time: SimTime, name: Option<u32>, key: u32, value: f64) {
        self.attribute_rows.push(AttributeRow {
            time,
            name: name.unwrap_or(NONE),
            key,
            value,
        });
    }

    pub fn lifecycle_count(&self) -> usize {
        self.lifecycle.len()
    }

    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }

    pub fn resource_row_count(&self) -> usize {
        self.resource_rows.len()
    }

    pub fn attribute_row_count(&self) -> usize {
        self.attribute_rows.len()
    }

    fn expand_arrival(&self, row: &ArrivalRow) -> ArrivalRecord {
        ArrivalRecord {
            name: self.arrival_names[row.name as usize].clone(),
            start_time: row.start,
            end_time: row.end,
            activity_time: row.activity,
            finished: row.finished,
            resource: self.resources.resolve(row.resource).to_owned(),
            replication: self.replication,
        }
    }

    fn sorted_rows<'a>(&'a self, rows: &'a [ArrivalRow]) -> Vec<&'a ArrivalRow> {
        let mut v: Vec<&ArrivalRow> = rows.iter().collect();
        v.sort_by(|a, b| {
            a.end
                .total_cmp(&b.end)
                .then_with(|| self.arrival_name(a.name).cmp(self.arrival_name(b.name)))
                .then_with(|| a.start.total_cmp(&b.start))
                .then_with(|| self.resources.resolve(a.resource).cmp(self.resources.resolve(b.resource)))
        });
        v
    }

    /// Lifecycle records (`per_resource = false`) or one record per
    /// resource visit, ordered by end time then name.
    pub fn get_mon_arrivals(&self, per_resource: bool) -> Vec<ArrivalRecord> {
        let rows = if per_resource { &self.visits } else { &self.lifecycle };
        self.sorted_rows(rows)
            .into_iter()
            .map(|r| self.expand_arrival(r))
            .collect()
    }

    /// Per-visit records of one resource, same order as `get_mon_arrivals`.
    pub fn visits_of(&self, resource: &str) -> Vec<ArrivalRecord> {
        let Some(id) = self.resources.get(resource) else {
            return Vec::new();
        };
        let rows: Vec<ArrivalRow> = self.visits.iter().filter(|r| r.resource == id).copied().collect();
        self.sorted_rows(&rows)
            .into_iter()
            .map(|r| self.expand_arrival(r))
            .collect()
    }

    /// In emission order.
    pub fn get_mon_resources(&self) -> Vec<ResourceRecord> {
        self.resource_rows
            .iter()
            .map(|r| ResourceRecord {
                resource: self.resources.resolve(r.resource).to_owned(),
                time: r.time,
                server: r.server,
                queue: r.queue,
                capacity: r.capacity,
                queue_size: r.queue_size,
                replication: self.replication,
            })
            .collect()
    }

    /// Ordered by (time, emission sequence).
    pub fn get_mon_attributes(&self) -> Vec<AttributeRecord> {
        self.attribute_rows
            .iter()
            .map(|r| self.expand_attribute(r))
            .collect()
    }

    fn expand_attribute(&self, r: &AttributeRow) -> AttributeRecord {
        AttributeRecord {
            time: r.time,
            name: if r.name == NONE {
                String::new()
            } else {
                self.arrival_names[r.name as usize].clone()
            },
            key: self.keys.resolve(r.key).to_owned(),
            value: r.value,
            replication: self.replication,
        }
    }

    /// Attribute records with the given key, without expanding the others.
    pub fn attributes_with_key(&self, key: &str) -> Vec<AttributeRecord> {
        let Some(id) = self.keys.get(key) else {
            return Vec::new();
        };
        self.attribute_rows
            .iter()
            .filter(|r| r.key == id)
            .map(|r| self.expand_attribute(r))
            .collect()
    }

    /// Writes `arrivals.csv`, `resources.csv` and `attributes.csv` into
    /// `dir`, creating it if needed.
    pub fn export_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| SimError::Io {
            path: dir.to_owned(),
            source,
        })?;
        self.write_arrivals(&dir.join(ARRIVALS_FILE))?;
        self.write_resources(&dir.join(RESOURCES_FILE))?;
        self.write_attributes(&dir.join(ATTRIBUTES_FILE))?;
        Ok(())
    }

    fn write_arrivals(&self, path: &Path) -> Result<()> {
        let mut w = open_writer(path)?;
        let err = csv_err(path);
        w.write_record(ARRIVALS_HEADER).map_err(&err)?;
        let rep = self.replication.to_string();
        for rows in [&self.lifecycle, &self.visits] {
            for r in self.sorted_rows(rows) {
                w.write_record([
                    self.arrival_name(r.name),
                    &fmt_real(r.start),
                    &fmt_real(r.end),
                    &fmt_real(r.activity),
                    fmt_bool(r.finished),
                    self.resources.resolve(r.resource),
                    &rep,
                ])
                .map_err(&err)?;
            }
        }
        w.flush().map_err(|source| SimError::Io {
            path: path.to_owned(),
            source,
        })
    }

    fn write_resources(&self, path: &Path) -> Result<()> {
        let mut w = open_writer(path)?;
        let err = csv_err(path);
        w.write_record(RESOURCES_HEADER).map_err(&err)?;
        let rep = self.replication.to_string();
        for r in &self.resource_rows {
            w.write_record([
                self.resources.resolve(r.resource),
                &fmt_real(r.time),
                &r.server.to_string(),
                &r.queue.to_string(),
                &r.capacity.to_string(),
                &r.queue_size.map_or_else(|| "Inf".to_owned(), |q| q.to_string()),
                &rep,
            ])
            .map_err(&err)?;
        }
        w.flush().map_err(|source| SimError::Io {
            path: path.to_owned(),
            source,
        })
    }

    fn write_attributes(&self, path: &Path) -> Result<()> {
        let mut w = open_writer(path)?;
        let err = csv_err(path);
        w.write_record(ATTRIBUTES_HEADER).map_err(&err)?;
        let rep = self.replication.to_string();
        for r in &self.attribute_rows {
            let name = if r.name == NONE {
                ""
            } else {
                self.arrival_name(r.name)
            };
            w.write_record([
                &fmt_real(r.time),
                name,
                self.keys.resolve(r.key),
                &fmt_real(r.value),
                &rep,
            ])
            .map_err(&err)?;
        }
        w.flush().map_err(|source| SimError::Io {
            path: path.to_owned(),
            source,
        })
    }

    /// Reads a directory written by [`MonitorStore::export_csv`].
    pub fn read_csv(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut store = MonitorStore::default();
        let mut names: HashMap<String, u32> = HashMap::new();
        let mut name_id = |store: &mut MonitorStore, n: &str| -> u32 {
            if let Some(&id) = names.get(n) {
                return id;
            }
            let id = store.add_arrival_name(n.to_owned());
            names.insert(n.to_owned(), id);
            id
        };

        let path = dir.join(ARRIVALS_FILE);
        for row in read_rows(&path, &ARRIVALS_HEADER)? {
            let name = name_id(&mut store, &row[0]);
            let resource = if row[5].is_empty() {
                NONE
            } else {
                store.resources.intern(&row[5])
            };
            let r = ArrivalRow {
                name,
                resource,
                start: parse_real(&path, &row[1])?,
                end: parse_real(&path, &row[2])?,
                activity: parse_real(&path, &row[3])?,
                finished: parse_bool(&path, &row[4])?,
            };
            store.replication = parse_int(&path, &row[6])? as u32;
            if resource == NONE {
                store.lifecycle.push(r);
            } else {
                store.visits.push(r);
            }
        }

        let path = dir.join(RESOURCES_FILE);
        for row in read_rows(&path, &RESOURCES_HEADER)? {
            let resource = store.resources.intern(&row[0]);
            let queue_size = if &row[5] == "Inf" {
                None
            } else {
                Some(parse_int(&path, &row[5])?)
            };
            store.resource_rows.push(ResourceRow {
                resource,
                time: parse_real(&path, &row[1])?,
                server: parse_int(&path, &row[2])?,
                queue: parse_int(&path, &row[3])?,
                capacity: parse_int(&path, &row[4])?,
                queue_size,
            });
            store.replication = parse_int(&path, &row[6])? as u32;
        }

        let path = dir.join(ATTRIBUTES_FILE);
        for row in read_rows(&path, &ATTRIBUTES_HEADER)? {
            let name = if row[1].is_empty() {
                NONE
            } else {
                name_id(&mut store, &row[1])
            };
            let key = store.keys.intern(&row[2]);
            store.attribute_rows.push(AttributeRow {
                time: parse_real(&path, &row[0])?,
                name,
                key,
                value: parse_real(&path, &row[3])?,
            });
            store.replication = parse_int(&path, &row[4])? as u32;
        }
        Ok(store)
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_real(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    format!("{x}")
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn open_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|source| SimError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |source| SimError::Csv {
        path: path.to_owned(),
        source,
    }
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| SimError::Csv {
            path: path.to_owned(),
            source,
        })?;
    let found = rdr.headers().map_err(csv_err(path))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(SimError::InvalidArgument(format!(
            "{}: unexpected header {:?}",
            path.display(),
            found
        )));
    }
    rdr.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err(path))
}

fn bad_field(path: &Path, field: &str) -> SimError {
    SimError::InvalidArgument(format!("{}: malformed field `{field}`", path.display()))
}

fn parse_real(path: &Path, s: &str) -> Result<f64> {
    match s {
        "Inf" => Ok(f64::INFINITY),
        "-Inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| bad_field(path, s)),
    }
}

fn parse_int(path: &Path, s: &str) -> Result<u64> {
    s.parse().map_err(|_| bad_field(path, s))
}

fn parse_bool(path: &Path, s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_field(path, s)),
    }
}

/// Waiting time per finished visit: `end - start - activity`, plus the
/// activity time when `include_service` is set.
pub fn queueing_delay(records: &[ArrivalRecord], include_service: bool) -> Result<Vec<f64>> {
    if let Some(r) = records.iter().find(|r| r.is_lifecycle()) {
        return Err(SimError::InvalidArgument(format!(
            "queueing_delay needs per-resource records, got lifecycle record for `{}`",
            r.name
        )));
    }
    Ok(records
        .iter()
        .filter(|r| r.finished)
        .map(|r| {
            if include_service {
                r.end_time - r.start_time
            } else {
                wait_time(r.start_time, r.end_time, r.activity_time)
            }
        })
        .collect())
}

/// `end - start - activity`, with rounding residue of the subtraction
/// (a few ulps of `end`) reported as exactly zero.
pub fn wait_time(start: f64, end: f64, activity: f64) -> f64 {
    let w = end - start - activity;
    if w.abs() <= 16.0 * f64::EPSILON * end.abs() {
        0.0
    } else {
        w
    }
}

/// Paths of the three monitor files under `dir` that do not exist.
pub fn missing_files(dir: &Path) -> Vec<PathBuf> {
    [ARRIVALS_FILE, RESOURCES_FILE, ATTRIBUTES_FILE]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.is_file())
        .collect()
}
