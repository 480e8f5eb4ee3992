//! Game of 24 over exact rationals.
//!
//! [`solve_24`] searches every way of repeatedly combining two of the remaining
//! values with `+ − × ÷`, which covers all orderings and parenthesizations.
//! [`check_24`] parses a candidate expression, checks that it uses the given
//! numbers exactly once each, and evaluates it without floating point.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::orchestrator::AnswerChecker;

pub type Q = Ratio<i64>;

pub const TARGET: i64 = 24;
pub const MIN_NUMBER: i64 = 1;
pub const MAX_NUMBER: i64 = 13;

#[derive(Clone)]
struct Item {
    value: Q,
    expr: String,
    atomic: bool,
}

fn wrap(item: &Item) -> String {
    if item.atomic {
        item.expr.clone()
    } else {
        format!("({})", item.expr)
    }
}

fn search(items: &[Item], nodes: &mut u64) -> Option<String> {
    *nodes += 1;
    if items.len() == 1 {
        return (items[0].value == Q::from_integer(TARGET)).then(|| items[0].expr.clone());
    }
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            let rest: Vec<Item> = items
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i && k != j)
                .map(|(_, it)| it.clone())
                .collect();
            let (a, b) = (&items[i], &items[j]);
            let mut candidates: Vec<(Q, String)> = Vec::with_capacity(6);
            candidates.push((a.value + b.value, format!("{} + {}", wrap(a), wrap(b))));
            candidates.push((a.value * b.value, format!("{} * {}", wrap(a), wrap(b))));
            candidates.push((a.value - b.value, format!("{} - {}", wrap(a), wrap(b))));
            candidates.push((b.value - a.value, format!("{} - {}", wrap(b), wrap(a))));
            if b.value != Q::from_integer(0) {
                candidates.push((a.value / b.value, format!("{} / {}", wrap(a), wrap(b))));
            }
            if a.value != Q::from_integer(0) {
                candidates.push((b.value / a.value, format!("{} / {}", wrap(b), wrap(a))));
            }
            for (value, expr) in candidates {
                let mut next = rest.clone();
                next.push(Item {
                    value,
                    expr,
                    atomic: false,
                });
                if let Some(found) = search(&next, nodes) {
                    return Some(found);
                }
            }
        }
    }
    None
}

/// Witness expression reaching 24, with the search effort spent.
pub fn solve_24_with_stats(numbers: [i64; 4]) -> (Option<String>, u64) {
    let items: Vec<Item> = numbers
        .iter()
        .map(|&n| Item {
            value: Q::from_integer(n),
            expr: n.to_string(),
            atomic: true,
        })
        .collect();
    let mut nodes = 0;
    let found = search(&items, &mut nodes);
    (found, nodes)
}

pub fn solve_24(numbers: [i64; 4]) -> Option<String> {
    solve_24_with_stats(numbers).0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckError {
    Parse(String),
    NumbersMismatch { expected: Vec<i64>, used: Vec<i64> },
    DivisionByZero,
    WrongValue(Q),
}

impl fmt::Display for CheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckError::Parse(msg) => write!(f, "parse error: {msg}"),
            CheckError::NumbersMismatch { expected, used } => {
                write!(f, "numbers used {used:?} do not match {expected:?}")
            }
            CheckError::DivisionByZero => f.write_str("division by zero"),
            CheckError::WrongValue(v) => write!(f, "value {v} ≠ {TARGET}"),
        }
    }
}

impl core::error::Error for CheckError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok {
    Num(i64),
    Op(char),
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, CheckError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '0'..='9' => {
                let mut n: i64 = 0;
                while let Some(&d) = chars.peek() {
                    let Some(digit) = d.to_digit(10) else { break };
                    n = n
                        .checked_mul(10)
                        .and_then(|n| n.checked_add(i64::from(digit)))
                        .ok_or_else(|| CheckError::Parse("number too large".into()))?;
                    chars.next();
                }
                if chars.peek() == Some(&'.') {
                    return Err(CheckError::Parse("only integers are allowed".into()));
                }
                out.push(Tok::Num(n));
            }
            '+' => {
                chars.next();
                out.push(Tok::Op('+'));
            }
            '-' | '−' | '–' => {
                chars.next();
                out.push(Tok::Op('-'));
            }
            '*' | '×' | '·' | 'x' | 'X' => {
                chars.next();
                out.push(Tok::Op('*'));
            }
            '/' | '÷' => {
                chars.next();
                out.push(Tok::Op('/'));
            }
            '(' | '[' => {
                chars.next();
                out.push(Tok::Open);
            }
            ')' | ']' => {
                chars.next();
                out.push(Tok::Close);
            }
            other => return Err(CheckError::Parse(format!("unexpected character {other:?}"))),
        }
    }
    if out.is_empty() {
        return Err(CheckError::Parse("empty expression".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Expr {
    Num(i64),
    Bin(char, Box<Expr>, Box<Expr>),
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<Tok> {
        self.toks.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, CheckError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, CheckError> {
        let mut lhs = self.factor()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, CheckError> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Num(n))
            }
            Some(Tok::Open) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(Tok::Close) {
                    return Err(CheckError::Parse("missing closing parenthesis".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Op('-')) => Err(CheckError::Parse("unary minus is not allowed".into())),
            Some(Tok::Op(op)) => Err(CheckError::Parse(format!("operator {op} without left operand"))),
            Some(Tok::Close) => Err(CheckError::Parse("unexpected closing parenthesis".into())),
            None => Err(CheckError::Parse("expression ends early".into())),
        }
    }
}

fn leaves(e: &Expr, out: &mut Vec<i64>) {
    match e {
        Expr::Num(n) => out.push(*n),
        Expr::Bin(_, a, b) => {
            leaves(a, out);
            leaves(b, out);
        }
    }
}

fn eval(e: &Expr) -> Result<Q, CheckError> {
    Ok(match e {
        Expr::Num(n) => Q::from_integer(*n),
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval(a)?, eval(b)?);
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                _ => {
                    if b == Q::from_integer(0) {
                        return Err(CheckError::DivisionByZero);
                    }
                    a / b
                }
            }
        }
    })
}

/// Accepts `expression` iff it uses `numbers` exactly once each and equals 24.
/// A trailing `= …` is ignored.
pub fn check_24(numbers: [i64; 4], expression: &str) -> Result<(), CheckError> {
    let lhs = expression.split('=').next().unwrap_or_default();
    let toks = tokenize(lhs)?;
    let mut parser = Parser { toks, pos: 0 };
    let tree = parser.expr()?;
    if parser.pos != parser.toks.len() {
        return Err(CheckError::Parse("trailing tokens after expression".into()));
    }
    let mut used = Vec::new();
    leaves(&tree, &mut used);
    used.sort_unstable();
    let mut expected = numbers.to_vec();
    expected.sort_unstable();
    if used != expected {
        return Err(CheckError::NumbersMismatch { expected, used });
    }
    let value = eval(&tree)?;
    if value != Q::from_integer(TARGET) {
        return Err(CheckError::WrongValue(value));
    }
    Ok(())
}

/// Random well-formed expression that uses each of `numbers` once.
pub fn random_expression<R: Rng + ?Sized>(numbers: [i64; 4], rng: &mut R) -> String {
    let mut items: Vec<(String, bool)> = numbers.iter().map(|n| (n.to_string(), true)).collect();
    items.shuffle(rng);
    while items.len() > 1 {
        let i = rng.random_range(0..items.len());
        let a = items.swap_remove(i);
        let j = rng.random_range(0..items.len());
        let b = items.swap_remove(j);
        let op = ['+', '-', '*', '/'][rng.random_range(0..4)];
        let side = |(e, atomic): &(String, bool)| if *atomic { e.clone() } else { format!("({e})") };
        items.push((format!("{} {op} {}", side(&a), side(&b)), false));
    }
    items.pop().map(|(e, _)| e).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Game24Instance {
    pub numbers: [i64; 4],
    pub solvable: bool,
}

impl Game24Instance {
    /// Builds an instance, deciding solvability with the exhaustive solver.
    pub fn new(numbers: [i64; 4]) -> Result<Self, super::SimError> {
        if numbers.iter().any(|n| !(MIN_NUMBER..=MAX_NUMBER).contains(n)) {
            return Err(super::SimError::Config(format!(
                "numbers must lie in [{MIN_NUMBER}, {MAX_NUMBER}], got {numbers:?}"
            )));
        }
        Ok(Self {
            numbers,
            solvable: solve_24(numbers).is_some(),
        })
    }

    pub fn task_text(&self) -> String {
        let [a, b, c, d] = self.numbers;
        format!(
            "Use the numbers {a}, {b}, {c} and {d} with +, -, * and / to make 24. \
             Use each number exactly once; parentheses are allowed. \
             Give the final expression in the form \\boxed{{expression}}."
        )
    }
}

/// Every multiset of four numbers in `[1, 13]`, in ascending order.
pub fn all_multisets() -> Vec<[i64; 4]> {
    let mut out = Vec::with_capacity(1820);
    for a in MIN_NUMBER..=MAX_NUMBER {
        for b in a..=MAX_NUMBER {
            for c in b..=MAX_NUMBER {
                for d in c..=MAX_NUMBER {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedPuzzle {
    pub instance: Game24Instance,
    /// Solver nodes visited before the first witness.
    pub difficulty: u64,
}

/// Solvable puzzles ordered from easiest to hardest.
pub fn ranked_puzzles() -> Vec<RankedPuzzle> {
    let mut ranked: Vec<RankedPuzzle> = all_multisets()
        .into_iter()
        .filter_map(|numbers| {
            let (found, nodes) = solve_24_with_stats(numbers);
            found.map(|_| RankedPuzzle {
                instance: Game24Instance {
                    numbers,
                    solvable: true,
                },
                difficulty: nodes,
            })
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.difficulty
            .cmp(&b.difficulty)
            .then_with(|| a.instance.numbers.cmp(&b.instance.numbers))
    });
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    /// Hardest tenth of the ranked puzzles.
    Test,
}

pub fn split(ranked: &[RankedPuzzle], which: Split) -> &[RankedPuzzle] {
    let cut = ranked.len() - ranked.len() / 10;
    match which {
        Split::Train => &ranked[..cut],
        Split::Test => &ranked[cut..],
    }
}

/// `count` distinct puzzles drawn from a split.
pub fn sample_puzzles<R: Rng + ?Sized>(which: Split, count: usize, rng: &mut R) -> Vec<Game24Instance> {
    let ranked = ranked_puzzles();
    let pool = split(&ranked, which);
    let mut picked: Vec<Game24Instance> = pool.iter().map(|p| p.instance.clone()).collect();
    picked.shuffle(rng);
    picked.truncate(count);
    picked
}

/// Verifies boxed answers against a fixed instance. The answer itself is tried
/// first; failing that, any `expression = 24` fragment in the step text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Game24Checker {
    pub numbers: [i64; 4],
}

fn expression_suffix(text: &str) -> &str {
    let allowed = |c: char| c.is_ascii_digit() || c.is_whitespace() || "+-−–*×·/÷()[]".contains(c);
    let start = text
        .char_indices()
        .rev()
        .take_while(|&(_, c)| allowed(c))
        .last()
        .map_or(text.len(), |(i, _)| i);
    text[start..].trim()
}

impl AnswerChecker for Game24Checker {
    fn accept(&self, answer: &str, step_text: &str) -> bool {
        if check_24(self.numbers, answer).is_ok() {
            return true;
        }
        step_text.lines().any(|line| {
            let mut parts = line.split('=');
            let mut prev = parts.next().unwrap_or_default();
            for rhs in parts {
                let value_is_target = rhs.trim_start().starts_with("24");
                if value_is_target && check_24(self.numbers, expression_suffix(prev)).is_ok() {
                    return true;
                }
                prev = rhs;
            }
            false
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_instances() {
        let w = solve_24([4, 9, 10, 13]).unwrap();
        assert_eq!(check_24([4, 9, 10, 13], &w), Ok(()));
        assert_eq!(solve_24([1, 1, 1, 1]), None);
        assert_eq!(check_24([6, 6, 6, 6], "6+6+6+6"), Ok(()));
        assert_eq!(check_24([4, 9, 10, 13], "(13−9)×(10−4)"), Ok(()));
        let err = check_24([4, 9, 10, 13], "4×9−10−13").unwrap_err();
        assert_eq!(err.to_string(), "value 13 ≠ 24");
    }

    #[test]
    fn diagnostics() {
        assert!(matches!(check_24([1, 2, 3, 4], "1*2*3"), Err(CheckError::NumbersMismatch { .. })));
        assert!(matches!(check_24([1, 2, 3, 4], "(1+2"), Err(CheckError::Parse(_))));
        assert!(matches!(check_24([1, 2, 3, 4], "-1+2+3+4"), Err(CheckError::Parse(_))));
        assert!(matches!(check_24([1, 2, 3, 4], "4/(3-3)*2*1"), Err(CheckError::NumbersMismatch { .. })));
        assert_eq!(check_24([1, 1, 2, 3], "3/(1-1)*2"), Err(CheckError::DivisionByZero));
        assert_eq!(check_24([1, 2, 3, 4], "1*2*3*4 = 24"), Ok(()));
        assert_eq!(check_24([3, 3, 8, 8], "8/(3-8/3)"), Ok(()));
        assert!(matches!(check_24([1, 2, 3, 4], "1.5*2*3*4"), Err(CheckError::Parse(_))));
    }

    #[test]
    fn multiset_count() {
        assert_eq!(all_multisets().len(), 1820);
    }

    #[test]
    fn fractional_solution_found() {
        let w = solve_24([3, 3, 8, 8]).unwrap();
        assert_eq!(check_24([3, 3, 8, 8], &w), Ok(()));
    }

    #[test]
    fn checker_reads_step_text() {
        let c = Game24Checker { numbers: [4, 9, 10, 13] };
        assert!(c.accept("(13-9)*(10-4)", ""));
        assert!(c.accept("24", "So we get (13 - 9) * (10 - 4) = 24.\n\\boxed{24}"));
        assert!(!c.accept("24", "4 * 9 - 10 - 13 = 24"));
    }

    #[test]
    fn instance_bounds() {
        assert!(Game24Instance::new([0, 1, 2, 3]).is_err());
        assert!(Game24Instance::new([1, 2, 3, 4]).unwrap().solvable);
    }
}
