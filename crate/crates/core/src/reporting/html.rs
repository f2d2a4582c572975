use std::fmt::Write as _;
use std::path::Path;

use super::{load, mutation_score, SessionRecord};
use crate::error::{Error, Result};
use crate::execution::MutantOutcome;

const STYLE: &str = "
body { font-family: sans-serif; margin: 2em; color: #222; }
table { border-collapse: collapse; margin-bottom: 2em; }
th, td { border: 1px solid #bbb; padding: 0.3em 0.6em; text-align: left; }
th { background: #eee; }
tr.survived td { background: #fde2e2; }
tr.killed td { background: #e3f4e1; }
.score { font-size: 2em; font-weight: bold; }
code { font-size: 0.9em; }
";

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Reads the database at `db` and writes a self-contained report to `out`.
pub fn generate_html(db: &Path, out: &Path) -> Result<()> {
    let record = load(db)?;
    let html = render_html(&record)?;
    std::fs::write(out, html).map_err(Error::Io)
}

pub fn render_html(record: &SessionRecord) -> Result<String> {
    let mut h = String::new();
    let _ = writeln!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Mutation testing report</title>\n<style>{STYLE}</style>\n</head>\n<body>"
    );
    h.push_str("<h1>Mutation testing report</h1>\n");

    let summary = match mutation_score(record) {
        Ok(s) => Some(s),
        Err(Error::EmptySession) => None,
        Err(e) => return Err(e),
    };

    h.push_str("<h2>Summary</h2>\n");
    if record.is_dry_run() {
        h.push_str("<p>Dry run: no mutant was executed.</p>\n<table>\n");
        for key in [
            "session.n_tests",
            "session.n_mutants",
            "session.planned_runs",
            "timeout_ms",
            "session.worst_case_ms",
        ] {
            if let Some(v) = record.config.get(key) {
                let label = key.trim_start_matches("session.");
                let _ = writeln!(h, "<tr><th>{}</th><td>{}</td></tr>", esc(label), esc(v));
            }
        }
        h.push_str("</table>\n");
    } else {
        let score = summary
            .as_ref()
            .map_or_else(|| "n/a".to_string(), |s| s.score_display());
        let _ = writeln!(
            h,
            "<p>Mutation score: <span class=\"score\" id=\"score\">{}</span></p>",
            esc(&score)
        );
        let (killed, survived) = summary
            .as_ref()
            .map_or((0, 0), |s| (s.killed(), s.survived()));
        let _ = writeln!(
            h,
            "<table>\n<tr><th>tests</th><td>{}</td></tr>\n<tr><th>mutants</th><td>{}</td></tr>\n\
             <tr><th>killed</th><td>{killed}</td></tr>\n<tr><th>survived</th><td>{survived}</td></tr>\n</table>",
            record.tests.len(),
            record.points.len()
        );
    }

    if let Some(summary) = &summary {
        h.push_str("<h2>Operators</h2>\n<table id=\"operators\">\n");
        h.push_str("<tr><th>operator</th><th>killed</th><th>survived</th><th>score</th></tr>\n");
        for (op, tally) in &summary.per_operator {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                esc(op),
                tally.killed,
                tally.survived,
                tally.score_display()
            );
        }
        h.push_str("</table>\n");
    }

    h.push_str("<h2>Mutants</h2>\n<table id=\"mutants\">\n");
    h.push_str(
        "<tr><th>mutation point</th><th>function</th><th>operator</th><th>distance</th>\
         <th>status</th><th>killed by</th></tr>\n",
    );
    for p in &record.points {
        let (class, status) = match p.status {
            Some(MutantOutcome::Killed) => ("killed", "killed"),
            Some(MutantOutcome::Survived) => ("survived", "survived"),
            None => ("planned", "not run"),
        };
        let killer = record.killing_test(&p.mp_id).unwrap_or("");
        let distance = p.min_distance.map_or_else(String::new, |d| d.to_string());
        let _ = writeln!(
            h,
            "<tr class=\"{class}\"><td><code>{}</code></td><td>{}:{}</td><td>{}</td><td>{distance}</td>\
             <td>{status}</td><td>{}</td></tr>",
            esc(&p.mp_id),
            esc(&p.module_path),
            esc(&p.function_name),
            esc(&p.operator),
            esc(killer)
        );
    }
    h.push_str("</table>\n");

    let survivors: Vec<_> = record
        .points
        .iter()
        .filter(|p| p.status == Some(MutantOutcome::Survived))
        .collect();
    if !survivors.is_empty() {
        h.push_str("<h2>Survivors</h2>\n<ul id=\"survivors\">\n");
        for p in survivors {
            let _ = writeln!(h, "<li><code>{}</code></li>", esc(&p.mp_id));
        }
        h.push_str("</ul>\n");
    }

    h.push_str("<h2>Tests</h2>\n<table id=\"tests\">\n");
    h.push_str("<tr><th>test</th><th>entry</th><th>baseline</th></tr>\n");
    for t in &record.tests {
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td><code>{}</code></td><td>{}</td></tr>",
            esc(&t.name),
            esc(&t.entry),
            t.baseline_status
        );
    }
    h.push_str("</table>\n</body>\n</html>\n");
    Ok(h)
}
