use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type StringTriple = (String, String, String);

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Reads `head<TAB>relation<TAB>tail` lines. Blank lines and lines starting
/// with `#` are skipped.
pub fn load_triples_tsv(path: impl AsRef<Path>) -> Result<Vec<StringTriple>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, line_no, "expected 3 fields, found an empty field"));
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(out)
}

pub fn write_triples_tsv<S: AsRef<str>>(path: impl AsRef<Path>, triples: &[(S, S, S)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for (h, r, t) in triples {
        writeln!(buf, "{}\t{}\t{}", h.as_ref(), r.as_ref(), t.as_ref()).expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// One QID per line; blank and `#` lines skipped.
pub fn load_seeds(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let qid = line.trim();
        if qid.contains(char::is_whitespace) {
            return Err(Error::parse(path, line_no, "expected a single QID"));
        }
        out.push(qid.to_owned());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), content).unwrap();
        f
    }

    #[test]
    fn empty_file() {
        let f = write("");
        assert!(load_triples_tsv(f.path()).unwrap().is_empty());
    }

    #[test]
    fn comments_are_skipped() {
        let f = write("Q1\tP31\tQ2\n# note\nQ2\tP279\tQ3\n");
        let got = load_triples_tsv(f.path()).unwrap();
        assert_eq!(
            got,
            vec![
                ("Q1".into(), "P31".into(), "Q2".into()),
                ("Q2".into(), "P279".into(), "Q3".into())
            ]
        );
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let f = write("Q1\tP31\n");
        let err = load_triples_tsv(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 1: expected 3 fields"), "{err}");
        let f = write("Q1\tP31\tQ2\nQ1\t\tQ2\n");
        let err = load_triples_tsv(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 2: expected 3 fields"), "{err}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_triples_tsv("/nonexistent/triples.tsv").unwrap_err().to_string();
        assert!(err.contains("/nonexistent/triples.tsv"));
    }

    #[test]
    fn seeds() {
        let f = write("Q1\n\n# c\nQ7\n");
        assert_eq!(load_seeds(f.path()).unwrap(), vec!["Q1", "Q7"]);
    }
}
