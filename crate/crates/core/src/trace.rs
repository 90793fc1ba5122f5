//! JSON Lines form of a game trace.
//!
//! Line 1 is a header (schedule, base, semigroup, precision, requested
//! rounds, seeds, labels, strategy context); each further line is one move.
//! A game that stopped on an error ends with an `error` line. Keys are
//! sorted and translations are written as exact decimal strings, so equal
//! traces give byte-identical files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::contraction::{AdmissibleBase, ContractionSemigroup, Domain, GameSpace};
use crate::game::{Annotations, GameTrace, Move, Player, Schedule};
use crate::hp;

pub const FORMAT: &str = "msgame-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace ends after {found} of {expected} moves")]
    Truncated { found: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    record: String,
    format: String,
    schedule: Schedule,
    base: AdmissibleBase,
    semigroup: ContractionSemigroup,
    precision: u32,
    rounds: usize,
    seeds: BTreeMap<String, u64>,
    labels: BTreeMap<String, String>,
    context: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MoveRecord {
    record: String,
    round: usize,
    player: Player,
    t: f64,
    translation: Vec<String>,
    annotations: Annotations,
}

/// A parsed trace file: the moves, the requested length, and the error the
/// game stopped on, if any.
#[derive(Debug, Clone)]
pub struct TraceFile {
    pub trace: GameTrace,
    pub rounds: usize,
    pub error: Option<String>,
}

fn line_of<T: Serialize>(x: &T) -> String {
    // Value goes through a BTreeMap, which sorts keys
    let v = serde_json::to_value(x).expect("trace records serialize");
    serde_json::to_string(&v).expect("trace records serialize")
}

/// Writes `trace` (played for `rounds` requested rounds) and an optional error line.
pub fn write_trace<W: Write>(out: &mut W, trace: &GameTrace, rounds: usize, error: Option<&str>) -> std::io::Result<()> {
    let header = Header {
        record: "header".into(),
        format: FORMAT.into(),
        schedule: trace.schedule,
        base: trace.space.base.clone(),
        semigroup: trace.space.semigroup.clone(),
        precision: trace.space.precision,
        rounds,
        seeds: trace.seeds.clone(),
        labels: trace.labels.clone(),
        context: trace.context.clone(),
    };
    writeln!(out, "{}", line_of(&header))?;
    for m in &trace.moves {
        let rec = MoveRecord {
            record: "move".into(),
            round: m.round,
            player: m.player,
            t: m.domain.t,
            translation: m.domain.translation.iter().map(hp::to_decimal).collect(),
            annotations: m.annotations.clone(),
        };
        writeln!(out, "{}", line_of(&rec))?;
    }
    if let Some(e) = error {
        writeln!(out, "{}", line_of(&json!({"record": "error", "message": e})))?;
    }
    Ok(())
}

pub fn trace_to_string(trace: &GameTrace, rounds: usize, error: Option<&str>) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace, rounds, error).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 output")
}

/// Parses a trace file. A file that stops before the requested number of
/// moves without an error line is reported as truncated.
pub fn read_trace<R: BufRead>(input: R) -> Result<TraceFile, TraceError> {
    let perr = |line: usize, msg: String| TraceError::Parse { line, msg };
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| perr(1, e.to_string()))?;
    if header.record != "header" || header.format != FORMAT {
        return Err(perr(1, format!("expected a {FORMAT} header")));
    }
    if header.base.dim() != header.semigroup.dim {
        return Err(perr(1, "base and semigroup dimensions differ".into()));
    }
    let space = GameSpace::with_precision(header.semigroup, header.base, header.precision);
    let mut trace = GameTrace::new(&space, header.schedule);
    trace.seeds = header.seeds;
    trace.labels = header.labels;
    trace.context = header.context;
    let mut error = None;
    for (i, line) in lines {
        let line = line?;
        let n = i + 1;
        if error.is_some() {
            return Err(perr(n, "records after the error line".into()));
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| perr(n, e.to_string()))?;
        match v.get("record").and_then(Value::as_str) {
            Some("move") => {
                let rec: MoveRecord = serde_json::from_value(v).map_err(|e| perr(n, e.to_string()))?;
                if rec.translation.len() != space.dim() {
                    return Err(perr(n, format!("translation has {} coordinates", rec.translation.len())));
                }
                let translation = rec
                    .translation
                    .iter()
                    .map(|s| hp::parse_decimal(s, space.precision).ok_or_else(|| perr(n, format!("bad decimal {s:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                trace.moves.push(Move {
                    player: rec.player,
                    round: rec.round,
                    domain: Domain::new(&space, rec.t, translation),
                    annotations: rec.annotations,
                });
            }
            Some("error") => {
                error = Some(v.get("message").and_then(Value::as_str).unwrap_or("").to_string());
            }
            _ => return Err(perr(n, "unknown record type".into())),
        }
    }
    let expected = 2 * header.rounds;
    if error.is_none() && trace.moves.len() != expected {
        return Err(TraceError::Truncated { found: trace.moves.len(), expected });
    }
    Ok(TraceFile { trace, rounds: header.rounds, error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::play;
    use crate::strategies::{bob_random, RandomMover};

    fn sample() -> GameTrace {
        let base = AdmissibleBase::unit(2);
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0], &base).unwrap();
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = GameSpace::with_horizon(sg, base, sched.t_prime(8));
        play(&mut RandomMover::new(1), &mut bob_random(2), &sp, &sched, 8).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let trace = sample();
        let text = trace_to_string(&trace, 8, None);
        let back = read_trace(text.as_bytes()).unwrap();
        assert_eq!(back.trace, trace);
        assert_eq!(trace_to_string(&back.trace, 8, None), text);
        assert!(back.error.is_none());
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let text = trace_to_string(&sample(), 8, None);
        let cut = &text[..text.len() - 40];
        assert!(matches!(read_trace(cut.as_bytes()), Err(TraceError::Parse { .. })));
        let whole_lines: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_trace(whole_lines.as_bytes()), Err(TraceError::Truncated { found: 4, expected: 16 })));
        assert!(read_trace("".as_bytes()).is_err());
    }

    #[test]
    fn error_line_allows_short_trace() {
        let mut trace = sample();
        trace.moves.truncate(3);
        let text = trace_to_string(&trace, 8, Some("round 2: failure"));
        let back = read_trace(text.as_bytes()).unwrap();
        assert_eq!(back.error.as_deref(), Some("round 2: failure"));
        assert_eq!(back.trace.moves.len(), 3);
    }
}
