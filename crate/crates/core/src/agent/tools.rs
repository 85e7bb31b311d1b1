//! The tool registry: seven tools, every path confined to a [`Jail`].

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::limits::Limit;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::agent::code::{run_code, CodeOutcome};
use crate::agent::model::{FunctionSchema, ToolSchema};
use crate::agent::profile::{fill, ToolProfile};
use crate::jail::{Jail, JailError};

/// Schema pragmas that only read. Everything else is denied.
const READ_PRAGMAS: &[&str] = &["table_info", "table_xinfo", "table_list", "index_list", "index_info", "foreign_key_list"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tool {
    ExecuteCode,
    ReadFile,
    WriteFile,
    ListDirectory,
    CreateDirectory,
    InspectSchema,
    RunQuery,
}

impl Tool {
    pub const ALL: [Tool; 7] = [
        Tool::ExecuteCode,
        Tool::ReadFile,
        Tool::WriteFile,
        Tool::ListDirectory,
        Tool::CreateDirectory,
        Tool::InspectSchema,
        Tool::RunQuery,
    ];

    fn parameters(self) -> Value {
        let s = |d: &str| json!({"type": "string", "description": d});
        let (props, required) = match self {
            Tool::ExecuteCode => (json!({"code": s("Python 3 source to run.")}), vec!["code"]),
            Tool::ReadFile => (json!({"path": s("File path.")}), vec!["path"]),
            Tool::WriteFile => (
                json!({"path": s("File path."), "content": s("Text to write.")}),
                vec!["path", "content"],
            ),
            Tool::ListDirectory => (json!({"path": s("Directory path. Defaults to the sandbox root.")}), vec![]),
            Tool::CreateDirectory => (json!({"path": s("Directory path.")}), vec!["path"]),
            Tool::InspectSchema => (json!({"db_path": s("Path to the SQLite database.")}), vec!["db_path"]),
            Tool::RunQuery => (
                json!({"db_path": s("Path to the SQLite database."), "query": s("A single SQL query.")}),
                vec!["db_path", "query"],
            ),
        };
        json!({"type": "object", "properties": props, "required": required})
    }
}

#[derive(Deserialize)]
struct CodeArgs {
    code: String,
}
#[derive(Deserialize)]
struct PathArgs {
    path: String,
}
#[derive(Deserialize)]
struct OptPathArgs {
    #[serde(default)]
    path: Option<String>,
}
#[derive(Deserialize)]
struct WriteArgs {
    path: String,
    content: String,
}
#[derive(Deserialize)]
struct DbArgs {
    db_path: String,
}
#[derive(Deserialize)]
struct QueryArgs {
    db_path: String,
    query: String,
}

/// Tool runtime shared by the conversations of one run. A panic inside a
/// tool poisons the runtime: every later call on it panics too, so the
/// owning run stops while other runs, with their own runtimes, carry on.
pub struct ToolRuntime {
    profile: Arc<ToolProfile>,
    calls: AtomicU64,
    fault_after: Option<u64>,
    poisoned: AtomicBool,
}

impl ToolRuntime {
    pub fn new(profile: Arc<ToolProfile>) -> ToolRuntime {
        ToolRuntime { profile, calls: AtomicU64::new(0), fault_after: None, poisoned: AtomicBool::new(false) }
    }

    /// Panic on the call after `n` successful ones. Used to exercise crash
    /// isolation.
    pub fn with_fault_after(mut self, n: u64) -> ToolRuntime {
        self.fault_after = Some(n);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.load(Ordering::SeqCst)
    }

    pub fn profile(&self) -> &ToolProfile {
        &self.profile
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        Tool::ALL
            .iter()
            .map(|&t| {
                let text = self.text(t);
                ToolSchema {
                    kind: "function".into(),
                    function: FunctionSchema {
                        name: text.name.clone(),
                        description: text.description.clone(),
                        parameters: t.parameters(),
                    },
                }
            })
            .collect()
    }

    fn text(&self, t: Tool) -> &crate::agent::profile::ToolText {
        let x = &self.profile.tools;
        match t {
            Tool::ExecuteCode => &x.execute_code,
            Tool::ReadFile => &x.read_file,
            Tool::WriteFile => &x.write_file,
            Tool::ListDirectory => &x.list_directory,
            Tool::CreateDirectory => &x.create_directory,
            Tool::InspectSchema => &x.inspect_schema,
            Tool::RunQuery => &x.run_query,
        }
    }

    pub fn lookup(&self, name: &str) -> Option<Tool> {
        Tool::ALL.into_iter().find(|&t| self.text(t).name == name)
    }

    /// Run one tool call. Failures come back as message text for the model.
    pub fn dispatch(&self, jail: &Jail, name: &str, arguments: &str) -> String {
        if self.is_poisoned() {
            panic!("tool runtime is poisoned");
        }
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let result = panic::catch_unwind(AssertUnwindSafe(|| {
            if self.fault_after.is_some_and(|after| n > after) {
                panic!("injected tool fault at call {n}");
            }
            self.dispatch_inner(jail, name, arguments)
        }));
        match result {
            Ok(s) => s,
            Err(payload) => {
                self.poisoned.store(true, Ordering::SeqCst);
                panic::resume_unwind(payload)
            }
        }
    }

    fn dispatch_inner(&self, jail: &Jail, name: &str, arguments: &str) -> String {
        let m = &self.profile.messages;
        let Some(tool) = self.lookup(name) else {
            return fill(&m.unknown_tool, &[("tool", name)]);
        };
        let raw = if arguments.trim().is_empty() { "{}" } else { arguments };
        match self.call(jail, tool, raw) {
            Ok(s) => s,
            Err(e) => fill(&m.bad_arguments, &[("tool", name), ("error", &e.to_string())]),
        }
    }

    fn call(&self, jail: &Jail, tool: Tool, raw: &str) -> Result<String, serde_json::Error> {
        Ok(match tool {
            Tool::ExecuteCode => {
                let a: CodeArgs = serde_json::from_str(raw)?;
                self.execute_code(jail, &a.code)
            }
            Tool::ReadFile => {
                let a: PathArgs = serde_json::from_str(raw)?;
                self.read_file(jail, &a.path)
            }
            Tool::WriteFile => {
                let a: WriteArgs = serde_json::from_str(raw)?;
                self.write_file(jail, &a.path, &a.content)
            }
            Tool::ListDirectory => {
                let a: OptPathArgs = serde_json::from_str(raw)?;
                self.list_directory(jail, a.path.as_deref().unwrap_or("."))
            }
            Tool::CreateDirectory => {
                let a: PathArgs = serde_json::from_str(raw)?;
                self.create_directory(jail, &a.path)
            }
            Tool::InspectSchema => {
                let a: DbArgs = serde_json::from_str(raw)?;
                self.inspect_schema(jail, &a.db_path)
            }
            Tool::RunQuery => {
                let a: QueryArgs = serde_json::from_str(raw)?;
                self.run_query(jail, &a.db_path, &a.query)
            }
        })
    }

    fn jail_error(&self, raw: &str, e: &JailError) -> String {
        let m = &self.profile.messages;
        match e {
            JailError::Escape(_) | JailError::Invalid(_) => fill(&m.path_rejected, &[("path", raw)]),
            JailError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                fill(&m.not_found, &[("path", raw)])
            }
            JailError::Io { source, .. } => fill(&m.io_error, &[("error", &source.to_string())]),
        }
    }

    fn io_error(&self, e: impl std::fmt::Display) -> String {
        fill(&self.profile.messages.io_error, &[("error", &e.to_string())])
    }

    pub fn execute_code(&self, jail: &Jail, code: &str) -> String {
        let m = &self.profile.messages;
        let settings = &self.profile.code;
        let with_note = |mut out: String, truncated: bool| {
            if truncated {
                out.push_str(&fill(&m.output_truncated, &[("bytes", &settings.output_limit_bytes.to_string())]));
            }
            out
        };
        match run_code(code, jail, settings) {
            CodeOutcome::Finished { code: Some(0), output, truncated } if output.is_empty() && !truncated => {
                m.empty_output.clone()
            }
            CodeOutcome::Finished { code: Some(0), output, truncated } => with_note(output, truncated),
            CodeOutcome::Finished { code, output, truncated } => {
                let code = code.map_or_else(|| "signal".to_string(), |c| c.to_string());
                fill(&m.nonzero_exit, &[("code", &code), ("output", &with_note(output, truncated))])
            }
            CodeOutcome::TimedOut { output, truncated } => fill(
                &m.timeout,
                &[("seconds", &settings.timeout_secs.to_string()), ("output", &with_note(output, truncated))],
            ),
            CodeOutcome::SpawnFailed(e) => fill(&m.spawn_failed, &[("error", &e)]),
            CodeOutcome::Rejected(r) => fill(&m.code_rejected, &[("reason", &r)]),
        }
    }

    pub fn read_file(&self, jail: &Jail, path: &str) -> String {
        let f = match jail.open_read(path) {
            Ok(f) => f,
            Err(e) => return self.jail_error(path, &e),
        };
        let limit = self.profile.read_file_limit_bytes;
        let mut buf = Vec::new();
        if let Err(e) = f.take(limit as u64 + 1).read_to_end(&mut buf) {
            return self.io_error(e);
        }
        let truncated = buf.len() > limit;
        buf.truncate(limit);
        let mut out = String::from_utf8_lossy(&buf).into_owned();
        if truncated {
            out.push_str(&fill(&self.profile.messages.output_truncated, &[("bytes", &limit.to_string())]));
        }
        out
    }

    pub fn write_file(&self, jail: &Jail, path: &str, content: &str) -> String {
        let (mut f, p) = match jail.open_write(path) {
            Ok(x) => x,
            Err(e) => return self.jail_error(path, &e),
        };
        if let Err(e) = f.write_all(content.as_bytes()) {
            return self.io_error(e);
        }
        fill(
            &self.profile.messages.write_ok,
            &[("bytes", &content.len().to_string()), ("path", &jail.display(&p))],
        )
    }

    pub fn list_directory(&self, jail: &Jail, path: &str) -> String {
        let p = match jail.resolve_existing(path) {
            Ok(p) => p,
            Err(e) => return self.jail_error(path, &e),
        };
        let entries = match std::fs::read_dir(&p) {
            Ok(rd) => rd,
            Err(e) => return self.io_error(e),
        };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                let is_dir = e.file_type().map(|t| t.is_dir()).unwrap_or(false);
                if is_dir { format!("{name}/") } else { name }
            })
            .collect();
        if names.is_empty() {
            return self.profile.messages.empty_directory.clone();
        }
        names.sort();
        names.join("\n")
    }

    pub fn create_directory(&self, jail: &Jail, path: &str) -> String {
        match jail.create_dir_all(path) {
            Ok(p) => fill(&self.profile.messages.mkdir_ok, &[("path", &jail.display(&p))]),
            Err(e) => self.jail_error(path, &e),
        }
    }

    fn open_db(&self, jail: &Jail, db_path: &str) -> Result<Connection, String> {
        let p = jail.resolve_existing(db_path).map_err(|e| self.jail_error(db_path, &e))?;
        if !p.is_file() {
            return Err(fill(&self.profile.messages.not_found, &[("path", db_path)]));
        }
        guarded_connection(&p, Duration::from_secs(self.profile.sql.query_timeout_secs))
            .map_err(|e| fill(&self.profile.messages.sql_error, &[("error", &e.to_string())]))
    }

    pub fn inspect_schema(&self, jail: &Jail, db_path: &str) -> String {
        let conn = match self.open_db(jail, db_path) {
            Ok(c) => c,
            Err(msg) => return msg,
        };
        describe_schema(&conn)
            .unwrap_or_else(|e| fill(&self.profile.messages.sql_error, &[("error", &e.to_string())]))
    }

    pub fn run_query(&self, jail: &Jail, db_path: &str, query: &str) -> String {
        let conn = match self.open_db(jail, db_path) {
            Ok(c) => c,
            Err(msg) => return msg,
        };
        let m = &self.profile.messages;
        match query_table(&conn, query, self.profile.sql.row_limit) {
            Ok(t) if t.rows.is_empty() => {
                if t.header.is_empty() { m.no_rows.clone() } else { format!("{}\n{}", align(&t.header, &[]), m.no_rows) }
            }
            Ok(t) => {
                let mut out = align(&t.header, &t.rows);
                if t.total > t.rows.len() {
                    out.push('\n');
                    out.push_str(&fill(
                        &m.rows_truncated,
                        &[("shown", &t.rows.len().to_string()), ("total", &t.total.to_string())],
                    ));
                }
                out
            }
            Err(e) => fill(&m.sql_error, &[("error", &e.to_string())]),
        }
    }
}

/// A read-only connection that cannot attach other databases, write files
/// through `VACUUM INTO`, run write statements or exceed `timeout`.
pub fn guarded_connection(path: &Path, timeout: Duration) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)?;
    // VACUUM INTO goes through the attach machinery, so this blocks both.
    conn.set_limit(Limit::SQLITE_LIMIT_ATTACHED, 0)?;
    conn.authorizer(Some(|ctx: AuthContext<'_>| match ctx.action {
        AuthAction::Select | AuthAction::Read { .. } | AuthAction::Function { .. } | AuthAction::Recursive => {
            Authorization::Allow
        }
        // The argument of these is a table or index name, never a setting.
        AuthAction::Pragma { pragma_name, .. }
            if READ_PRAGMAS.contains(&pragma_name.to_ascii_lowercase().as_str()) =>
        {
            Authorization::Allow
        }
        _ => Authorization::Deny,
    }))?;
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() > deadline))?;
    Ok(conn)
}

struct QueryTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    total: usize,
}

fn cell(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "NULL".into(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => format!("{f:?}"),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => format!("<blob {} bytes>", b.len()),
    }
}

fn query_table(conn: &Connection, sql: &str, limit: usize) -> rusqlite::Result<QueryTable> {
    let mut stmt = conn.prepare(sql)?;
    let header: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let n = header.len();
    let mut rows = Vec::new();
    let mut total = 0usize;
    let mut q = stmt.query([])?;
    while let Some(row) = q.next()? {
        total += 1;
        if rows.len() < limit {
            rows.push((0..n).map(|i| row.get_ref(i).map(cell)).collect::<rusqlite::Result<Vec<_>>>()?);
        }
    }
    Ok(QueryTable { header, rows, total })
}

fn align(header: &[String], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(n) {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                s.push_str(" | ");
            }
            let pad = widths[i] - c.chars().count();
            s.push_str(c);
            if i + 1 < cells.len() {
                s.extend(std::iter::repeat_n(' ', pad));
            }
        }
        s
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    for r in rows {
        out.push('\n');
        out.push_str(&line(r));
    }
    out
}

fn describe_schema(conn: &Connection) -> rusqlite::Result<String> {
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
    )?;
    let tables: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
    if tables.is_empty() {
        return Ok("(no tables)".into());
    }
    let mut out = String::new();
    for t in &tables {
        let mut fks = std::collections::BTreeMap::new();
        let mut fk = conn.prepare("SELECT \"from\", \"table\", \"to\" FROM pragma_foreign_key_list(?1)")?;
        for r in fk.query_map([t], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, Option<String>>(2)?)))? {
            let (from, table, to) = r?;
            fks.insert(from, format!("{table}({})", to.unwrap_or_else(|| "rowid".into())));
        }
        let mut cols = conn.prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid")?;
        let cols: Vec<(String, String, i64)> = cols
            .query_map([t], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
            .collect::<rusqlite::Result<_>>()?;
        let _ = writeln!(out, "table {t} (");
        for (i, (name, ty, pk)) in cols.iter().enumerate() {
            let mut line = format!("  {name} {ty}");
            if *pk > 0 {
                line.push_str(" PRIMARY KEY");
            }
            if let Some(target) = fks.get(name) {
                let _ = write!(line, " REFERENCES {target}");
            }
            if i + 1 < cols.len() {
                line.push(',');
            }
            let _ = writeln!(out, "{line}");
        }
        out.push_str(")\n");
    }
    Ok(out.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, Jail, ToolRuntime) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("root");
        std::fs::create_dir(&root).unwrap();
        let jail = Jail::new(&root).unwrap();
        let c = Connection::open(root.join("db.sqlite")).unwrap();
        c.execute_batch(
            "CREATE TABLE a(id INTEGER PRIMARY KEY, name TEXT);
             CREATE TABLE b(id INTEGER PRIMARY KEY, a_id INTEGER REFERENCES a(id), v REAL);
             INSERT INTO a(name) VALUES ('x'), ('yy'), ('zzz');
             INSERT INTO b(a_id, v) VALUES (1, 1.5), (2, 2.0);",
        )
        .unwrap();
        (dir, jail, ToolRuntime::new(Arc::new(ToolProfile::default())))
    }

    #[test]
    fn schemas_cover_all_tools() {
        let (_d, _j, rt) = setup();
        let s = rt.schemas();
        assert_eq!(s.len(), 7);
        assert_eq!(s[6].function.name, "run_query");
        assert_eq!(s[6].function.parameters["required"], json!(["db_path", "query"]));
    }

    #[test]
    fn file_round_trip() {
        let (_d, jail, rt) = setup();
        assert_eq!(rt.dispatch(&jail, "write_file", r#"{"path":"o.txt","content":"abc"}"#), "Wrote 3 bytes to o.txt.");
        assert_eq!(rt.dispatch(&jail, "read_file", r#"{"path":"o.txt"}"#), "abc");
        assert_eq!(rt.dispatch(&jail, "create_directory", r#"{"path":"d/e"}"#), "Created directory d/e.");
        assert_eq!(rt.dispatch(&jail, "list_directory", "{}"), "d/\ndb.sqlite\no.txt");
        assert_eq!(rt.dispatch(&jail, "list_directory", r#"{"path":"d/e"}"#), "(empty directory)");
        assert_eq!(rt.calls(), 5);
    }

    #[test]
    fn escapes_are_rejected() {
        let (d, jail, rt) = setup();
        let out = rt.dispatch(&jail, "write_file", r#"{"path":"../evil","content":"x"}"#);
        assert_eq!(out, "Error: ../evil is outside the sandbox.");
        assert!(!d.path().join("evil").exists());
        std::os::unix::fs::symlink(d.path(), jail.root().join("link")).unwrap();
        let out = rt.dispatch(&jail, "write_file", r#"{"path":"link/evil","content":"x"}"#);
        assert!(out.contains("outside the sandbox"), "{out}");
        assert!(!d.path().join("evil").exists());
        assert_eq!(rt.dispatch(&jail, "read_file", r#"{"path":"nope"}"#), "Error: nope does not exist.");
    }

    #[test]
    fn bad_calls() {
        let (_d, jail, rt) = setup();
        assert_eq!(rt.dispatch(&jail, "frobnicate", "{}"), "Error: unknown tool frobnicate.");
        assert!(rt.dispatch(&jail, "read_file", "{").starts_with("Error: invalid arguments for read_file"));
    }

    #[test]
    fn empty_output_message() {
        let (_d, jail, rt) = setup();
        assert_eq!(
            rt.dispatch(&jail, "execute_code", r#"{"code":"x = 1"}"#),
            "Code executed successfully with no output"
        );
        assert_eq!(rt.dispatch(&jail, "execute_code", r#"{"code":"print(6*7)"}"#), "42\n");
    }

    #[test]
    fn query_and_schema() {
        let (_d, jail, rt) = setup();
        let out = rt.dispatch(&jail, "run_query", r#"{"db_path":"db.sqlite","query":"SELECT id, name FROM a ORDER BY id"}"#);
        assert_eq!(out, "id | name\n---+-----\n1  | x\n2  | yy\n3  | zzz");
        let s = rt.dispatch(&jail, "inspect_schema", r#"{"db_path":"db.sqlite"}"#);
        assert!(s.contains("table b (\n  id INTEGER PRIMARY KEY,\n  a_id INTEGER REFERENCES a(id),\n  v REAL\n)"), "{s}");
        let none = rt.dispatch(&jail, "run_query", r#"{"db_path":"db.sqlite","query":"SELECT id FROM a WHERE 0"}"#);
        assert_eq!(none, "id\n--\n(no rows)");
    }

    #[test]
    fn row_cap() {
        let (_d, jail, rt) = setup();
        let mut p = (*rt.profile).clone();
        p.sql.row_limit = 2;
        let rt = ToolRuntime::new(Arc::new(p));
        let out = rt.run_query(&jail, "db.sqlite", "SELECT name FROM a ORDER BY id");
        assert!(out.ends_with("zz\n[showing 2 of 3 rows]") || out.ends_with("yy\n[showing 2 of 3 rows]"), "{out}");
    }

    #[test]
    fn writes_and_attach_are_denied() {
        let (d, jail, rt) = setup();
        for q in [
            "DELETE FROM a",
            "INSERT INTO a(name) VALUES ('q')",
            "DROP TABLE b",
            "PRAGMA journal_mode = WAL",
        ] {
            assert!(rt.run_query(&jail, "db.sqlite", q).starts_with("SQL error"), "{q}");
        }
        let out_db = d.path().join("copy.db");
        let q = format!("VACUUM INTO '{}'", out_db.display());
        assert!(rt.run_query(&jail, "db.sqlite", &q).starts_with("SQL error"));
        assert!(!out_db.exists());
        let q = format!("ATTACH '{}' AS x", d.path().join("other.db").display());
        assert!(rt.run_query(&jail, "db.sqlite", &q).starts_with("SQL error"));
        assert!(!d.path().join("other.db").exists());
        assert_eq!(rt.run_query(&jail, "db.sqlite", "SELECT count(*) FROM a"), "count(*)\n--------\n3");
    }

    #[test]
    fn slow_query_is_interrupted() {
        let (_d, jail, rt) = setup();
        let mut p = rt.profile().clone();
        p.sql.query_timeout_secs = 1;
        let rt = ToolRuntime::new(Arc::new(p));
        let t = Instant::now();
        let out = rt.run_query(
            &jail,
            "db.sqlite",
            "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT max(x) FROM c",
        );
        assert!(out.starts_with("SQL error"), "{out}");
        assert!(t.elapsed() < Duration::from_secs(10));
    }

    #[test]
    #[should_panic(expected = "poisoned")]
    fn fault_injection() {
        let (_d, jail, rt) = setup();
        let rt = rt.with_fault_after(1);
        rt.dispatch(&jail, "list_directory", "{}");
        let second = panic::catch_unwind(AssertUnwindSafe(|| rt.dispatch(&jail, "list_directory", "{}")));
        assert!(second.is_err());
        assert!(rt.is_poisoned());
        rt.dispatch(&jail, "list_directory", "{}");
    }
}
