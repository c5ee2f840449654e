//! File formats owned by the CLI.
//!
//! Sequence files hold one or more records, each a header line starting with `>` followed by
//! one-letter codes on any number of lines. `X` is the mask token. A file without a header is
//! read as a single record named `seq`.
//!
//! Index specs are comma-separated zero-based indices and inclusive ranges: `0-4,9,12-13`.

use std::path::{Path, PathBuf};

use se3fm::backbone::SequenceRecord;
use se3fm::data::{parse_pdb, PdbChain};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedSequence {
    pub name: String,
    pub seq: SequenceRecord,
}

pub fn parse_sequences(text: &str) -> anyhow::Result<Vec<NamedSequence>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('>') {
            let name = h.split_whitespace().next().unwrap_or("").to_string();
            out.push((name, String::new()));
        } else {
            if out.is_empty() {
                out.push(("seq".to_string(), String::new()));
            }
            out.last_mut().expect("pushed above").1.push_str(line);
        }
    }
    if out.is_empty() {
        return Err(CliError::config("sequence file holds no records").into());
    }
    out.into_iter()
        .enumerate()
        .map(|(k, (name, letters))| {
            let name = if name.is_empty() { format!("seq{k}") } else { name };
            if letters.is_empty() {
                return Err(CliError::config(format!("sequence record {name} is empty")).into());
            }
            let seq = SequenceRecord::from_one_letter(&letters.to_ascii_uppercase())?;
            Ok(NamedSequence { name, seq })
        })
        .collect()
}

pub fn parse_index_spec(spec: &str) -> anyhow::Result<Vec<usize>> {
    let bad = |part: &str| CliError::config(format!("bad index spec element {part:?} in {spec:?}"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad(part))?;
                let b: usize = b.trim().parse().map_err(|_| bad(part))?;
                if b < a {
                    return Err(bad(part).into());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    if out.is_empty() {
        return Err(CliError::config(format!("index spec {spec:?} selects nothing")).into());
    }
    Ok(out)
}

/// `*.pdb` files directly inside `dir`, sorted by file name.
pub fn list_pdbs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "pdb"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn read_pdb(path: &Path) -> anyhow::Result<PdbChain> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_pdb(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?)
}

/// File stem used as a sample id.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Fixed-precision float for text tables.
pub fn f(x: f64) -> String {
    format!("{x:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_with_headers_and_wrapping() {
        let recs = parse_sequences(">a first\nMKV\nLL\n\n>b\nGX\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].name, "a");
        assert_eq!(recs[0].seq.to_one_letter(), "MKVLL");
        assert!(recs[0].seq.is_fully_observed());
        assert_eq!(recs[1].seq.to_one_letter(), "GX");
        assert!(!recs[1].seq.is_fully_observed());
    }

    #[test]
    fn headerless_file_is_one_record() {
        let recs = parse_sequences("acde\n").unwrap();
        assert_eq!(recs[0].name, "seq");
        assert_eq!(recs[0].seq.to_one_letter(), "ACDE");
    }

    #[test]
    fn bad_sequences_are_config_errors() {
        for text in ["", ">a\n", ">a\nMK1\n"] {
            let err = parse_sequences(text).unwrap_err();
            assert_eq!(crate::exit_code(&err), 2, "{text:?}");
        }
    }

    #[test]
    fn index_specs() {
        assert_eq!(parse_index_spec("0-2, 5,7-7").unwrap(), vec![0, 1, 2, 5, 7]);
        for bad in ["", "3-1", "a", "1-", ","] {
            assert!(parse_index_spec(bad).is_err(), "{bad:?}");
        }
    }
}
