use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::read_to_string;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionSet {
    pub benchmark_id: String,
    pub questions: Vec<String>,
}

impl QuestionSet {
    pub fn new(benchmark_id: impl Into<String>, questions: Vec<String>) -> Result<Self> {
        let benchmark_id = benchmark_id.into();
        if questions.is_empty() {
            return Err(Error::Invalid(format!("question set '{benchmark_id}' is empty")));
        }
        if let Some(k) = questions.iter().position(|q| q.trim().is_empty()) {
            return Err(Error::Invalid(format!(
                "question {} of '{benchmark_id}' is blank",
                k + 1
            )));
        }
        Ok(Self {
            benchmark_id,
            questions,
        })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

fn escape(q: &str) -> String {
    let mut out = String::with_capacity(q.len());
    for ch in q.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// One question per line; embedded newlines are written as `\n`.
pub fn load_question_set(path: impl AsRef<Path>, benchmark_id: &str) -> Result<QuestionSet> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let questions = text
        .strip_suffix('\n')
        .unwrap_or(&text)
        .split('\n')
        .map(|l| unescape(l.strip_suffix('\r').unwrap_or(l)))
        .collect();
    QuestionSet::new(benchmark_id, questions).map_err(|e| match e {
        Error::Invalid(msg) => Error::parse(path.display().to_string(), msg),
        other => other,
    })
}

/// Loads `<dir>/<benchmark_id>.txt` for each requested benchmark.
pub fn load_question_sets<S: AsRef<str>>(dir: impl AsRef<Path>, benchmark_ids: &[S]) -> Result<Vec<QuestionSet>> {
    benchmark_ids
        .iter()
        .map(|b| {
            let b = b.as_ref();
            load_question_set(dir.as_ref().join(format!("{b}.txt")), b)
        })
        .collect()
}

pub fn write_question_set(path: impl AsRef<Path>, set: &QuestionSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for q in &set.questions {
        out.push_str(&escape(q));
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_newlines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.txt");
        let set = QuestionSet::new(
            "b",
            vec!["What is 2+2?\nA) 3\nB) 4".into(), "Path C:\\temp\\n?".into()],
        )
        .unwrap();
        write_question_set(&p, &set).unwrap();
        let raw = std::fs::read_to_string(&p).unwrap();
        assert_eq!(raw.lines().count(), 2);
        assert!(raw.starts_with("What is 2+2?\\nA) 3\\nB) 4\n"));
        assert_eq!(load_question_set(&p, "b").unwrap(), set);
    }

    #[test]
    fn rejects_blank_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.txt");
        std::fs::write(&p, "one\n   \nthree\n").unwrap();
        assert!(load_question_set(&p, "b").unwrap_err().to_string().contains("blank"));
        std::fs::write(&p, "").unwrap();
        assert!(load_question_set(&p, "b").is_err());
    }
}
