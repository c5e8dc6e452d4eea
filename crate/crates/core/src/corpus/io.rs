use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::marker::PhantomData;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::curation::CandidateSet;

use super::{BenchmarkRecord, CorpusError, FieldError, PromptLike, Record, SftTriplet, UserPrompt, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaKind {
    UserPrompt,
    SftTriplet,
    Benchmark,
    Verdict,
    CandidateSet,
}

impl FromStr for SchemaKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user-prompt" | "prompt" | "prompts" => Ok(SchemaKind::UserPrompt),
            "sft" | "sft-triplet" | "triplet" => Ok(SchemaKind::SftTriplet),
            "benchmark" | "bench" => Ok(SchemaKind::Benchmark),
            "verdict" | "verdicts" => Ok(SchemaKind::Verdict),
            "candidate-set" | "candidates" => Ok(SchemaKind::CandidateSet),
            other => Err(format!(
                "unknown schema `{other}` (expected user-prompt, sft, benchmark, verdict or candidate-set)"
            )),
        }
    }
}

/// Iterator over the records of one line-delimited file. Blank lines are
/// skipped; a bad line yields an error and iteration continues.
pub struct RecordStream<T> {
    lines: Lines<BufReader<File>>,
    line_no: usize,
    _marker: PhantomData<T>,
}

impl<T: Record> Iterator for RecordStream<T> {
    type Item = Result<T, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(CorpusError::Io(e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&line, self.line_no));
        }
    }
}

fn parse_line<T: Record>(line: &str, line_no: usize) -> Result<T, CorpusError> {
    let violation = |e: FieldError| CorpusError::SchemaViolation {
        line: line_no,
        field: e.field,
        reason: e.reason,
    };
    let mut de = serde_json::Deserializer::from_str(line);
    let record: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        let field = missing_field(&message)
            .or_else(|| (path != "." && !path.is_empty()).then_some(path))
            .unwrap_or_else(|| "<record>".to_string());
        violation(FieldError::new(field, message))
    })?;
    record.validate().map_err(violation)?;
    Ok(record)
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_string)
}

pub fn read_stream<T: Record>(path: impl AsRef<Path>) -> Result<RecordStream<T>, CorpusError> {
    let file = File::open(path)?;
    Ok(RecordStream {
        lines: BufReader::new(file).lines(),
        line_no: 0,
        _marker: PhantomData,
    })
}

/// Reads every record, failing on the first bad line.
pub fn read_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    read_stream(path)?.collect()
}

/// Validates every record, then writes them one per line. Nothing is written
/// if any record is invalid.
pub fn write_stream<T: Record>(path: impl AsRef<Path>, records: &[T]) -> Result<usize, CorpusError> {
    for record in records {
        record.validate()?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

/// A record of any supported kind, for tools that pick the schema at run time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AnyRecord {
    UserPrompt(UserPrompt),
    SftTriplet(SftTriplet),
    Benchmark(BenchmarkRecord),
    Verdict(Verdict),
    CandidateSet(CandidateSet),
}

impl AnyRecord {
    pub fn read_all(
        path: impl AsRef<Path>,
        kind: SchemaKind,
    ) -> Result<Vec<Result<AnyRecord, CorpusError>>, CorpusError> {
        fn collect<T: Record>(
            path: &Path,
            wrap: fn(T) -> AnyRecord,
        ) -> Result<Vec<Result<AnyRecord, CorpusError>>, CorpusError> {
            Ok(read_stream::<T>(path)?.map(|r| r.map(wrap)).collect())
        }
        let path = path.as_ref();
        match kind {
            SchemaKind::UserPrompt => collect(path, AnyRecord::UserPrompt),
            SchemaKind::SftTriplet => collect(path, AnyRecord::SftTriplet),
            SchemaKind::Benchmark => collect(path, AnyRecord::Benchmark),
            SchemaKind::Verdict => collect(path, AnyRecord::Verdict),
            SchemaKind::CandidateSet => collect(path, AnyRecord::CandidateSet),
        }
    }

    /// The prompt view of the record; verdicts carry no prompt.
    pub fn as_prompt_like(&self) -> Option<&dyn PromptLike> {
        match self {
            AnyRecord::UserPrompt(r) => Some(r),
            AnyRecord::SftTriplet(r) => Some(r),
            AnyRecord::Benchmark(r) => Some(r),
            AnyRecord::CandidateSet(r) => Some(&r.user_prompt),
            AnyRecord::Verdict(_) => None,
        }
    }
}
