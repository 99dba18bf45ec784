//! Process-boundary backend.
//!
//! The problem is written as `problem.txt` (sectioned triplets) and
//! `index.json` into a scratch directory. The child receives the two paths on
//! stdin, one per line, and must print a line `status <word>` followed by the
//! solution vector as whitespace-separated numbers. Exit code 0 means the
//! output can be parsed.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use super::{failure, SolveResult, SolveStatus};
use crate::assembler::StandardProblem;

pub fn run_external(p: &StandardProblem, command: &[String]) -> SolveResult {
    let n = p.n_vars();
    let fail = |msg: String| failure(SolveStatus::NumericalFailure, n, None, msg);
    let Some((program, args)) = command.split_first() else {
        return fail("external backend: empty command".into());
    };

    let dir = std::env::temp_dir().join(format!(
        "equiflow-ext-{}-{}",
        std::process::id(),
        SCRATCH.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    ));
    let outcome = (|| -> Result<SolveResult, String> {
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let problem_path: PathBuf = dir.join("problem.txt");
        let index_path: PathBuf = dir.join("index.json");
        let mut f = fs::File::create(&problem_path).map_err(|e| e.to_string())?;
        p.write_triplets(&mut f).map_err(|e| e.to_string())?;
        fs::write(&index_path, p.index_json().to_string()).map_err(|e| e.to_string())?;

        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("cannot start {program}: {e}"))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            writeln!(stdin, "{}\n{}", problem_path.display(), index_path.display())
                .map_err(|e| e.to_string())?;
        }
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("external solver exited with {}", out.status));
        }
        parse_output(&String::from_utf8_lossy(&out.stdout), n)
    })();
    let _ = fs::remove_dir_all(&dir);
    outcome.unwrap_or_else(fail)
}

static SCRATCH: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

fn parse_output(text: &str, n: usize) -> Result<SolveResult, String> {
    let mut status = None;
    let mut x = Vec::with_capacity(n);
    for line in text.lines() {
        let line = line.trim();
        if let Some(word) = line.strip_prefix("status") {
            let word = word.trim();
            status = Some(SolveStatus::parse(word).ok_or_else(|| format!("unknown status {word:?}"))?);
            continue;
        }
        for tok in line.split_whitespace() {
            x.push(tok.parse::<f64>().map_err(|e| format!("bad number {tok:?}: {e}"))?);
        }
    }
    let status = status.ok_or("missing status line")?;
    if status == SolveStatus::Optimal && x.len() != n {
        return Err(format!("expected {n} values, got {}", x.len()));
    }
    x.resize(n, 0.0);
    Ok(SolveResult {
        status,
        x,
        objective: f64::NAN,
        duality_gap: f64::NAN,
        iterations: 0,
        wall_time_s: 0.0,
        max_violation: f64::NAN,
        suspect_row: None,
        message: None,
    })
}
