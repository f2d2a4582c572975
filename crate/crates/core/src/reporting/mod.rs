//! Results database and HTML report.
//!
//! A session is stored as one SQLite file with four tables: `config`,
//! `test`, `mutation_point` and `execution`. Baseline runs are execution
//! rows with a NULL `mp_id`. In a dry run `mutation_point.status` is NULL
//! and `execution` is empty.

mod html;

use std::collections::BTreeMap;
use std::path::Path;

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

pub use html::{generate_html, render_html};

use crate::error::{Error, Result};
use crate::execution::{ExecutionStatus, MutantOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub test_id: usize,
    pub name: String,
    /// `<module_path>:<export>`
    pub entry: String,
    pub arguments: Vec<i32>,
    pub baseline_status: ExecutionStatus,
    pub baseline_duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointRow {
    pub mp_id: String,
    pub operator: String,
    pub module_path: String,
    pub function_name: String,
    pub instr_index: usize,
    /// None until the mutant has been executed.
    pub status: Option<MutantOutcome>,
    /// Distance of the nearest candidate test; None when no test reaches it.
    pub min_distance: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRow {
    pub exec_id: usize,
    pub test_id: usize,
    /// None for baseline runs.
    pub mp_id: Option<String>,
    pub status: ExecutionStatus,
    pub duration_ms: f64,
}

/// Everything a session writes to the results database.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub config: BTreeMap<String, String>,
    pub tests: Vec<TestRow>,
    pub points: Vec<PointRow>,
    pub executions: Vec<ExecutionRow>,
}

impl SessionRecord {
    pub fn is_dry_run(&self) -> bool {
        self.config.get("dry_run").map(String::as_str) == Some("true")
    }

    /// Copy with every duration zeroed, for comparing two sessions.
    pub fn without_durations(&self) -> SessionRecord {
        let mut copy = self.clone();
        for t in &mut copy.tests {
            t.baseline_duration_ms = 0.0;
        }
        for e in &mut copy.executions {
            e.duration_ms = 0.0;
        }
        copy
    }

    /// Name of the first test whose run killed `mp_id`.
    pub fn killing_test(&self, mp_id: &str) -> Option<&str> {
        let exec = self
            .executions
            .iter()
            .find(|e| e.mp_id.as_deref() == Some(mp_id) && !e.status.is_passed())?;
        self.tests
            .iter()
            .find(|t| t.test_id == exec.test_id)
            .map(|t| t.name.as_str())
    }
}

const SCHEMA: &str = "
CREATE TABLE config (
    key TEXT PRIMARY KEY NOT NULL,
    value TEXT NOT NULL
);
CREATE TABLE test (
    test_id INTEGER PRIMARY KEY NOT NULL,
    name TEXT NOT NULL UNIQUE,
    entry TEXT NOT NULL,
    arguments TEXT NOT NULL,
    baseline_status TEXT NOT NULL,
    baseline_duration_ms REAL NOT NULL
);
CREATE TABLE mutation_point (
    mp_id TEXT PRIMARY KEY NOT NULL,
    operator TEXT NOT NULL,
    module_path TEXT NOT NULL,
    function_name TEXT NOT NULL,
    instr_index INTEGER NOT NULL,
    status TEXT CHECK (status IN ('killed', 'survived')),
    min_distance INTEGER
);
CREATE TABLE execution (
    exec_id INTEGER PRIMARY KEY NOT NULL,
    test_id INTEGER NOT NULL REFERENCES test(test_id),
    mp_id TEXT REFERENCES mutation_point(mp_id),
    status TEXT NOT NULL,
    duration_ms REAL NOT NULL
);
";

fn outcome_to_db(outcome: MutantOutcome) -> &'static str {
    match outcome {
        MutantOutcome::Killed => "killed",
        MutantOutcome::Survived => "survived",
    }
}

fn outcome_from_db(s: &str) -> Result<MutantOutcome> {
    match s {
        "killed" => Ok(MutantOutcome::Killed),
        "survived" => Ok(MutantOutcome::Survived),
        other => Err(corrupt(format!("mutation status `{other}`"))),
    }
}

fn corrupt(reason: String) -> Error {
    Error::Database(rusqlite::Error::InvalidParameterName(reason))
}

fn status_from_db(s: &str) -> Result<ExecutionStatus> {
    s.parse().map_err(corrupt)
}

/// Writes `record` to `path`, replacing any existing file. The database is
/// built in a temporary file next to `path` and renamed into place, so the
/// target is either the old file, absent, or complete.
pub fn persist(record: &SessionRecord, path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::Builder::new()
        .prefix(".mullw-db-")
        .suffix(".tmp")
        .tempfile_in(dir)?;
    {
        let mut conn = Connection::open(tmp.path())?;
        conn.execute_batch("PRAGMA foreign_keys = ON;")?;
        let tx = conn.transaction()?;
        tx.execute_batch(SCHEMA)?;
        write_rows(&tx, record)?;
        tx.commit()?;
        conn.close().map_err(|(_, e)| e)?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_rows(tx: &rusqlite::Transaction, record: &SessionRecord) -> Result<()> {
    let mut stmt = tx.prepare("INSERT INTO config (key, value) VALUES (?1, ?2)")?;
    for (k, v) in &record.config {
        stmt.execute(params![k, v])?;
    }
    let mut stmt = tx.prepare(
        "INSERT INTO test (test_id, name, entry, arguments, baseline_status, baseline_duration_ms)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
    )?;
    for t in &record.tests {
        let args = serde_json::to_string(&t.arguments).expect("i32 list serializes");
        stmt.execute(params![
            t.test_id as i64,
            t.name,
            t.entry,
            args,
            t.baseline_status.to_string(),
            t.baseline_duration_ms
        ])?;
    }
    let mut stmt = tx.prepare(
        "INSERT INTO mutation_point
         (mp_id, operator, module_path, function_name, instr_index, status, min_distance)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
    )?;
    for p in &record.points {
        stmt.execute(params![
            p.mp_id,
            p.operator,
            p.module_path,
            p.function_name,
            p.instr_index as i64,
            p.status.map(outcome_to_db),
            p.min_distance
        ])?;
    }
    let mut stmt = tx.prepare(
        "INSERT INTO execution (exec_id, test_id, mp_id, status, duration_ms)
         VALUES (?1, ?2, ?3, ?4, ?5)",
    )?;
    for e in &record.executions {
        stmt.execute(params![
            e.exec_id as i64,
            e.test_id as i64,
            e.mp_id,
            e.status.to_string(),
            e.duration_ms
        ])?;
    }
    Ok(())
}

/// Reads a database written by [`persist`].
pub fn load(path: &Path) -> Result<SessionRecord> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let conn = Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let mut record = SessionRecord::default();

    let mut stmt = conn.prepare("SELECT key, value FROM config ORDER BY key")?;
    for row in stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))? {
        let (k, v) = row?;
        record.config.insert(k, v);
    }

    let mut stmt = conn.prepare(
        "SELECT test_id, name, entry, arguments, baseline_status, baseline_duration_ms
         FROM test ORDER BY test_id",
    )?;
    let rows = stmt.query_map([], |r| {
        Ok((
            r.get::<_, i64>(0)?,
            r.get::<_, String>(1)?,
            r.get::<_, String>(2)?,
            r.get::<_, String>(3)?,
            r.get::<_, String>(4)?,
            r.get::<_, f64>(5)?,
        ))
    })?;
    for row in rows {
        let (id, name, entry, args, status, duration) = row?;
        record.tests.push(TestRow {
            test_id: id as usize,
            name,
            entry,
            arguments: serde_json::from_str(&args)
                .map_err(|e| corrupt(format!("test arguments: {e}")))?,
            baseline_status: status_from_db(&status)?,
            baseline_duration_ms: duration,
        });
    }

    let mut stmt = conn.prepare(
        "SELECT mp_id, operator, module_path, function_name, instr_index, status, min_distance
         FROM mutation_point ORDER BY rowid",
    )?;
    let rows = stmt.query_map([], |r| {
        Ok((
            r.get::<_, String>(0)?,
            r.get::<_, String>(1)?,
            r.get::<_, String>(2)?,
            r.get::<_, String>(3)?,
            r.get::<_, i64>(4)?,
            r.get::<_, Option<String>>(5)?,
            r.get::<_, Option<u32>>(6)?,
        ))
    })?;
    for row in rows {
        let (mp_id, operator, module_path, function_name, instr_index, status, min_distance) = row?;
        record.points.push(PointRow {
            mp_id,
            operator,
            module_path,
            function_name,
            instr_index: instr_index as usize,
            status: status.as_deref().map(outcome_from_db).transpose()?,
            min_distance,
        });
    }

    let mut stmt = conn.prepare(
        "SELECT exec_id, test_id, mp_id, status, duration_ms FROM execution ORDER BY exec_id",
    )?;
    let rows = stmt.query_map([], |r| {
        Ok((
            r.get::<_, i64>(0)?,
            r.get::<_, i64>(1)?,
            r.get::<_, Option<String>>(2)?,
            r.get::<_, String>(3)?,
            r.get::<_, f64>(4)?,
        ))
    })?;
    for row in rows {
        let (exec_id, test_id, mp_id, status, duration_ms) = row?;
        record.executions.push(ExecutionRow {
            exec_id: exec_id as usize,
            test_id: test_id as usize,
            mp_id,
            status: status_from_db(&status)?,
            duration_ms,
        });
    }
    Ok(record)
}

/// Single value from the `config` table.
pub fn config_value(path: &Path, key: &str) -> Result<Option<String>> {
    let conn = Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    Ok(conn
        .query_row("SELECT value FROM config WHERE key = ?1", [key], |r| {
            r.get(0)
        })
        .optional()?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub killed: usize,
    pub survived: usize,
}

impl Tally {
    fn add(&mut self, outcome: MutantOutcome) {
        match outcome {
            MutantOutcome::Killed => self.killed += 1,
            MutantOutcome::Survived => self.survived += 1,
        }
    }

    /// killed / (killed + survived); None when nothing was executed.
    pub fn score(&self) -> Option<f64> {
        let total = self.killed + self.survived;
        (total > 0).then(|| self.killed as f64 / total as f64)
    }

    /// Two decimals, or `n/a`.
    pub fn score_display(&self) -> String {
        self.score()
            .map_or_else(|| "n/a".to_string(), |s| format!("{s:.2}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub total: Tally,
    pub per_operator: BTreeMap<String, Tally>,
    /// Points without an outcome (dry run).
    pub unexecuted: usize,
}

impl ScoreSummary {
    pub fn killed(&self) -> usize {
        self.total.killed
    }

    pub fn survived(&self) -> usize {
        self.total.survived
    }

    pub fn score(&self) -> Option<f64> {
        self.total.score()
    }

    pub fn score_display(&self) -> String {
        self.total.score_display()
    }
}

/// Tally of `mutation_point.status`.
pub fn mutation_score(record: &SessionRecord) -> Result<ScoreSummary> {
    summarize(record, |p| p.status)
}

/// Same tally recomputed from the execution rows alone.
pub fn score_from_executions(record: &SessionRecord) -> Result<ScoreSummary> {
    let mut executed: BTreeMap<&str, bool> = BTreeMap::new();
    for e in &record.executions {
        if let Some(mp_id) = &e.mp_id {
            *executed.entry(mp_id.as_str()).or_default() |= !e.status.is_passed();
        }
    }
    let dry = record.is_dry_run();
    summarize(record, |p| {
        if dry {
            return None;
        }
        Some(match executed.get(p.mp_id.as_str()) {
            Some(true) => MutantOutcome::Killed,
            _ => MutantOutcome::Survived,
        })
    })
}

fn summarize(
    record: &SessionRecord,
    outcome: impl Fn(&PointRow) -> Option<MutantOutcome>,
) -> Result<ScoreSummary> {
    if record.points.is_empty() {
        return Err(Error::EmptySession);
    }
    let mut summary = ScoreSummary::default();
    for p in &record.points {
        let per_op = summary.per_operator.entry(p.operator.clone()).or_default();
        match outcome(p) {
            Some(o) => {
                summary.total.add(o);
                per_op.add(o);
            }
            None => summary.unexecuted += 1,
        }
    }
    Ok(summary)
}
