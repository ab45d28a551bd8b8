//! Word and line counters against a character-scan oracle.

use devagents::metrics::{count_loc, count_words};
use devagents::Attachment;
use proptest::prelude::*;

/// Every code point with the Unicode White_Space property.
const WHITE_SPACE: &[char] = &[
    '\u{9}', '\u{a}', '\u{b}', '\u{c}', '\u{d}', '\u{20}', '\u{85}', '\u{a0}', '\u{1680}', '\u{2000}', '\u{2001}',
    '\u{2002}', '\u{2003}', '\u{2004}', '\u{2005}', '\u{2006}', '\u{2007}', '\u{2008}', '\u{2009}', '\u{200a}',
    '\u{2028}', '\u{2029}', '\u{202f}', '\u{205f}', '\u{3000}',
];

fn oracle_words(doc: &str) -> u64 {
    let mut count = 0;
    let mut in_word = false;
    for ch in doc.chars() {
        if WHITE_SPACE.contains(&ch) {
            in_word = false;
        } else if !in_word {
            in_word = true;
            count += 1;
        }
    }
    count
}

fn oracle_loc(file: &str) -> u64 {
    let mut count = 0;
    let mut has_ink = false;
    for ch in file.chars() {
        if ch == '\n' {
            count += u64::from(has_ink);
            has_ink = false;
        } else if !WHITE_SPACE.contains(&ch) {
            has_ink = true;
        }
    }
    count + u64::from(has_ink)
}

fn document() -> impl Strategy<Value = String> {
    let pieces = prop_oneof![
        4 => "[a-zA-Z0-9_#=(){}.,;:'\"]{1,8}",
        3 => Just(" ".to_string()),
        2 => Just("\n".to_string()),
        1 => Just("\t".to_string()),
        1 => Just("\r\n".to_string()),
        1 => prop::sample::select(WHITE_SPACE.to_vec()).prop_map(String::from),
        1 => "[\u{e9}\u{4e2d}\u{1f40d}\u{200b}]{1,3}",
    ];
    prop::collection::vec(pieces, 0..80).prop_map(|p| p.concat())
}

#[test]
fn oracle_agrees_with_hand_counts() {
    assert_eq!(oracle_words("to be or not to be"), 6);
    assert_eq!(oracle_loc("a=1\n\n# note\nb=2\n"), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn words_match_oracle(docs in prop::collection::vec(document(), 0..4)) {
        let expected: u64 = docs.iter().map(|d| oracle_words(d)).sum();
        prop_assert_eq!(count_words(&docs), expected);
    }

    #[test]
    fn loc_matches_oracle(files in prop::collection::vec(document(), 0..4)) {
        let expected: u64 = files.iter().map(|f| oracle_loc(f)).sum();
        let attachments: Vec<Attachment> =
            files.iter().enumerate().map(|(i, f)| Attachment::new(format!("f{i}.py"), f.clone())).collect();
        prop_assert_eq!(count_loc(&attachments), expected);
    }
}
