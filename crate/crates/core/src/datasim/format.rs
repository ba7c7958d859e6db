//! Session and schema files.
//!
//! Session file: a mandatory header line `#format=pear-sessions/1`, then one
//! record per line with four tab-separated columns:
//!
//! ```text
//! user_id <TAB> user fields (csv) <TAB> history <TAB> candidates
//! ```
//!
//! `history` is `;`-separated item-field csv groups, oldest first, and may
//! be empty. `candidates` is `;`-separated `fields:label` groups with label
//! `0` or `1`, in displayed order. A zero-byte file is an empty stream.
//!
//! Schema file: header `#format=pear-schema/1`, then `side <TAB> name <TAB>
//! cardinality` per field, user fields before item fields.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use super::{Candidate, SessionRecord};
use crate::embedding::{FeatureSchema, FieldSpec};
use crate::error::{Error, Result};

pub const SESSION_HEADER: &str = "#format=pear-sessions/1";
pub const SCHEMA_HEADER: &str = "#format=pear-schema/1";

fn csv(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn format_session(s: &SessionRecord) -> String {
    let history = s
        .history
        .iter()
        .map(|h| csv(h))
        .collect::<Vec<_>>()
        .join(";");
    let candidates = s
        .candidates
        .iter()
        .map(|c| format!("{}:{}", csv(&c.item), u8::from(c.clicked)))
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "{}\t{}\t{}\t{}",
        s.user_id,
        csv(&s.user),
        history,
        candidates
    )
}

pub fn write_sessions(path: &Path, sessions: &[SessionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{SESSION_HEADER}")?;
        for s in sessions {
            writeln!(w, "{}", format_session(s))?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

fn parse_csv(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad index `{p}`: {e}"))
        })
        .collect()
}

pub fn parse_session(line: &str) -> std::result::Result<SessionRecord, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(format!(
            "expected 4 tab-separated columns, found {}",
            cols.len()
        ));
    }
    let user_id = cols[0]
        .parse::<u64>()
        .map_err(|e| format!("bad user id `{}`: {e}", cols[0]))?;
    let user = parse_csv(cols[1])?;
    let history = if cols[2].is_empty() {
        Vec::new()
    } else {
        cols[2]
            .split(';')
            .map(parse_csv)
            .collect::<std::result::Result<_, _>>()?
    };
    if cols[3].is_empty() {
        return Err("candidate list is empty".into());
    }
    let candidates = cols[3]
        .split(';')
        .map(|g| {
            let (fields, label) = g
                .rsplit_once(':')
                .ok_or_else(|| format!("candidate `{g}` lacks `:label`"))?;
            let clicked = match label {
                "0" => false,
                "1" => true,
                other => return Err(format!("label `{other}` is not 0 or 1")),
            };
            Ok(Candidate {
                item: parse_csv(fields)?,
                clicked,
            })
        })
        .collect::<std::result::Result<_, String>>()?;
    Ok(SessionRecord {
        user_id,
        user,
        history,
        candidates,
    })
}

/// Streaming reader over a session file, validating every record.
pub struct SessionReader<'s> {
    lines: Lines<Box<dyn BufRead>>,
    path: PathBuf,
    line: usize,
    schema: &'s FeatureSchema,
}

impl<'s> SessionReader<'s> {
    pub fn open(path: &Path, schema: &'s FeatureSchema) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_reader(
            Box::new(BufReader::new(file)),
            path,
            schema,
        ))
    }

    pub fn from_reader(reader: Box<dyn BufRead>, path: &Path, schema: &'s FeatureSchema) -> Self {
        SessionReader {
            lines: reader.lines(),
            path: path.to_path_buf(),
            line: 0,
            schema,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }
}

impl Iterator for SessionReader<'_> {
    type Item = Result<SessionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line += 1;
            if self.line == 1 {
                if raw.trim_end() != SESSION_HEADER {
                    return Some(Err(self.err(format!("missing header `{SESSION_HEADER}`"))));
                }
                continue;
            }
            if raw.is_empty() {
                continue;
            }
            let rec = match parse_session(&raw) {
                Ok(r) => r,
                Err(msg) => return Some(Err(self.err(msg))),
            };
            if let Err(e) = rec.validate(self.schema) {
                return Some(Err(self.err(e.to_string())));
            }
            return Some(Ok(rec));
        }
    }
}

pub fn load_sessions(path: &Path, schema: &FeatureSchema) -> Result<Vec<SessionRecord>> {
    SessionReader::open(path, schema)?.collect()
}

pub fn read_sessions(text: &str, schema: &FeatureSchema) -> Result<Vec<SessionRecord>> {
    let reader: Box<dyn BufRead> = Box::new(std::io::Cursor::new(text.as_bytes().to_vec()));
    SessionReader::from_reader(reader, Path::new("<memory>"), schema).collect()
}

pub fn write_schema(path: &Path, schema: &FeatureSchema) -> Result<()> {
    let mut out = format!("{SCHEMA_HEADER}\n");
    for (side, fields) in [("user", &schema.user_fields), ("item", &schema.item_fields)] {
        for f in fields {
            out.push_str(&format!("{side}\t{}\t{}\n", f.name, f.cardinality));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a schema file, giving every field width `embed_dim`.
pub fn load_schema(path: &Path, embed_dim: usize) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == SCHEMA_HEADER => {}
        _ => return Err(err(1, format!("missing header `{SCHEMA_HEADER}`"))),
    }
    let mut user = Vec::new();
    let mut item = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [side, name, card] = cols[..] else {
            return Err(err(
                i + 1,
                "expected `side<TAB>name<TAB>cardinality`".into(),
            ));
        };
        let card: usize = card
            .parse()
            .map_err(|e| err(i + 1, format!("bad cardinality `{card}`: {e}")))?;
        let spec = FieldSpec::new(name, card, embed_dim);
        match side {
            "user" => user.push(spec),
            "item" => item.push(spec),
            other => return Err(err(i + 1, format!("unknown side `{other}`"))),
        }
    }
    FeatureSchema::new(user, item)
}

/// A generated data directory: schema plus the three splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub train: Vec<SessionRecord>,
    pub val: Vec<SessionRecord>,
    pub test: Vec<SessionRecord>,
}

impl Dataset {
    pub fn load(dir: &Path, embed_dim: usize) -> Result<Self> {
        let schema = load_schema(&dir.join("schema.tsv"), embed_dim)?;
        let load = |name: &str| load_sessions(&dir.join(format!("{name}.tsv")), &schema);
        Ok(Dataset {
            train: load("train")?,
            val: load("val")?,
            test: load("test")?,
            schema: schema.clone(),
        })
    }

    pub fn split(&self, name: &str) -> Result<&[SessionRecord]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}
