//! Tab-separated conversation files with an `id turn1 turn2 turn3 [label]`
//! header.

use std::fmt::Write as _;
use std::path::Path;

use super::{tokenize, Conversation, Emotion};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["id", "turn1", "turn2", "turn3"];

pub fn parse_tsv(path: &Path, has_label: bool) -> Result<Vec<Conversation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv_str(&text, has_label, path)
}

/// Reads a file whose label column may be absent, deciding from the header.
pub fn read_tsv(path: &Path) -> Result<Vec<Conversation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let has_label = text
        .lines()
        .next()
        .is_some_and(|h| h.trim_end_matches('\r').split('\t').count() == HEADER.len() + 1);
    parse_tsv_str(&text, has_label, path)
}

/// Parses file contents; `origin` only labels error messages.
pub fn parse_tsv_str(text: &str, has_label: bool, origin: &Path) -> Result<Vec<Conversation>> {
    let columns = if has_label { 5 } else { 4 };
    let err = |line: usize, detail: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        detail,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split('\t').collect();
    let header_ok =
        fields.len() == columns && fields[..4] == HEADER && (!has_label || fields[4] == "label");
    if !header_ok {
        return Err(err(1, format!("unexpected header {header:?}")));
    }

    let mut out = Vec::new();
    for (line, row) in lines {
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != columns {
            return Err(err(
                line,
                format!("expected {columns} columns, found {}", fields.len()),
            ));
        }
        let label = if has_label {
            Some(
                fields[4]
                    .trim()
                    .parse::<Emotion>()
                    .map_err(|_| err(line, format!("unknown label {:?}", fields[4])))?,
            )
        } else {
            None
        };
        out.push(Conversation {
            id: fields[0].to_string(),
            turns: [
                tokenize(fields[1]),
                tokenize(fields[2]),
                tokenize(fields[3]),
            ],
            label,
        });
    }
    Ok(out)
}

/// Serializes conversations, joining tokens with single spaces. A label
/// column is written iff `with_label`; every conversation must then carry one.
pub fn to_tsv_string(conversations: &[Conversation], with_label: bool) -> Result<String> {
    let mut s = HEADER.join("\t");
    if with_label {
        s.push_str("\tlabel");
    }
    s.push('\n');
    for c in conversations {
        let [a, b, t] = &c.turns;
        let _ = write!(
            s,
            "{}\t{}\t{}\t{}",
            c.id,
            a.join(" "),
            b.join(" "),
            t.join(" ")
        );
        if with_label {
            let label = c
                .label
                .ok_or_else(|| Error::contract(format!("conversation {} has no label", c.id)))?;
            let _ = write!(s, "\t{label}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_tsv(path: &Path, conversations: &[Conversation], with_label: bool) -> Result<()> {
    std::fs::write(path, to_tsv_string(conversations, with_label)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, has_label: bool) -> Result<Vec<Conversation>> {
        parse_tsv_str(text, has_label, Path::new("mem.tsv"))
    }

    #[test]
    fn labelled_row() {
        let rows = parse(
            "id\tturn1\tturn2\tturn3\tlabel\n1\thi\thello\thow are you\tothers\n",
            true,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].id, "1");
        assert_eq!(rows[0].turns[2], ["how", "are", "you"]);
        assert_eq!(rows[0].label, Some(Emotion::Others));
    }

    #[test]
    fn unlabelled_row() {
        let rows = parse("id\tturn1\tturn2\tturn3\n7\ta\tb\tc\n", false).unwrap();
        assert_eq!(rows[0].label, None);
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let text = "id\tturn1\tturn2\tturn3\tlabel\n\
                    1\ta\tb\tc\thappy\n\
                    2\ta\tb\tc\tsad\n\
                    3\ta\tb\tangry\n\
                    4\ta\tb\tc\tothers\n\
                    5\ta\tb\tc\tothers\n";
        match parse(text, true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_parse_error() {
        let text = "id\tturn1\tturn2\tturn3\tlabel\n1\ta\tb\tc\texcited\n";
        assert!(matches!(
            parse(text, true),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn header_checked() {
        assert!(parse("id\tturn1\tturn2\tturn3\n", true).is_err());
        assert!(parse("", false).is_err());
    }

    fn conversation() -> impl Strategy<Value = Conversation> {
        let turn = "[a-zA-Z0-9 ,.!?'😀😢😠]{0,24}";
        (
            "[a-z0-9]{1,8}",
            turn,
            turn,
            turn,
            proptest::option::of(0usize..4),
        )
            .prop_map(|(id, a, b, c, label)| Conversation {
                id,
                turns: [tokenize(&a), tokenize(&b), tokenize(&c)],
                label: label.and_then(Emotion::from_index),
            })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(convs in proptest::collection::vec(conversation(), 0..12)) {
            let labelled: Vec<Conversation> = convs
                .iter()
                .cloned()
                .map(|mut c| { c.label.get_or_insert(Emotion::Others); c })
                .collect();
            let text = to_tsv_string(&labelled, true).unwrap();
            prop_assert_eq!(parse(&text, true).unwrap(), labelled);

            let unlabelled: Vec<Conversation> = convs
                .into_iter()
                .map(|mut c| { c.label = None; c })
                .collect();
            let text = to_tsv_string(&unlabelled, false).unwrap();
            prop_assert_eq!(parse(&text, false).unwrap(), unlabelled);
        }
    }
}
