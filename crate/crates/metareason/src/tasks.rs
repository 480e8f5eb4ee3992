//! Task sources: inline text, Game-of-24 puzzle files and scenario scripts.

use std::fs;
use std::io;
use std::path::Path;

use metareason_core::sim::game24::Game24Instance;
use metareason_core::sim::scenario::ScenarioScript;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    Inline(String),
    Puzzles(Vec<Game24Instance>),
    Scenario(Box<ScenarioScript>),
}

impl TaskSource {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSource::Inline(_) => "inline",
            TaskSource::Puzzles(_) => "puzzle_file",
            TaskSource::Scenario(_) => "scenario_file",
        }
    }

    /// `.toml` files are scenario scripts; anything else is a puzzle CSV.
    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| TaskError::Read {
            path: shown.clone(),
            source,
        })?;
        let parse = |message: String| TaskError::Parse {
            path: shown.clone(),
            message,
        };
        if path.extension().is_some_and(|e| e == "toml") {
            let script: ScenarioScript = toml::from_str(&text).map_err(|e| parse(e.to_string()))?;
            script.validate().map_err(|e| parse(e.to_string()))?;
            Ok(TaskSource::Scenario(Box::new(script)))
        } else {
            read_puzzles(&text).map(TaskSource::Puzzles).map_err(parse)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PuzzleRow {
    a: i64,
    b: i64,
    c: i64,
    d: i64,
    solvable: bool,
}

/// Parses `a,b,c,d,solvable` rows; the solvability column must agree with
/// the solver.
pub fn read_puzzles(text: &str) -> Result<Vec<Game24Instance>, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<PuzzleRow>().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let instance = Game24Instance::new([row.a, row.b, row.c, row.d]).map_err(|e| format!("row {}: {e}", i + 1))?;
        if instance.solvable != row.solvable {
            return Err(format!(
                "row {}: {:?} is marked solvable={} but the solver says {}",
                i + 1,
                instance.numbers,
                row.solvable,
                instance.solvable
            ));
        }
        out.push(instance);
    }
    if out.is_empty() {
        return Err("no puzzles".into());
    }
    Ok(out)
}

pub fn write_puzzles(puzzles: &[Game24Instance]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in puzzles {
        let [a, b, c, d] = p.numbers;
        w.serialize(PuzzleRow {
            a,
            b,
            c,
            d,
            solvable: p.solvable,
        })
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn puzzle_round_trip() {
        let puzzles = vec![
            Game24Instance::new([4, 9, 10, 13]).unwrap(),
            Game24Instance::new([1, 1, 1, 1]).unwrap(),
        ];
        let text = write_puzzles(&puzzles);
        assert!(text.starts_with("a,b,c,d,solvable\n4,9,10,13,true\n"));
        assert_eq!(read_puzzles(&text).unwrap(), puzzles);
    }

    #[test]
    fn mislabelled_rows_are_rejected() {
        assert!(read_puzzles("a,b,c,d,solvable\n1,1,1,1,true\n").is_err());
        assert!(read_puzzles("a,b,c,d,solvable\n1,1,1,14,false\n").is_err());
        assert!(read_puzzles("a,b,c,d,solvable\n").is_err());
    }
}
