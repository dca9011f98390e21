use alloc::string::String;
use alloc::vec::Vec;

/// Majority answer over extracted sample answers.
///
/// Samples the extractor cannot parse are dropped from the vote. Ties go to
/// the answer that appeared first. Returns `None` when nothing was
/// extractable.
pub fn aggregate_self_consistency<S, F>(samples: &[S], extractor: F) -> Option<String>
where
    S: AsRef<str>,
    F: Fn(&str) -> Option<String>,
{
    let mut tally: Vec<(String, usize)> = Vec::new();
    for answer in samples.iter().filter_map(|s| extractor(s.as_ref())) {
        match tally.iter_mut().find(|(a, _)| *a == answer) {
            Some((_, n)) => *n += 1,
            None => tally.push((answer, 1)),
        }
    }
    let mut best: Option<(String, usize)> = None;
    for (answer, n) in tally {
        if best.as_ref().is_none_or(|(_, b)| n > *b) {
            best = Some((answer, n));
        }
    }
    best.map(|(a, _)| a)
}

/// Last integer or decimal numeral in `text`, with thousands separators
/// removed (`"it costs 1,250.5 dollars"` gives `"1250.5"`).
pub fn last_number(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut last: Option<String> = None;
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let negative =
            i > 0 && bytes[i - 1] == b'-' && (i < 2 || !bytes[i - 2].is_ascii_alphanumeric());
        let mut num = String::new();
        if negative {
            num.push('-');
        }
        while i < bytes.len() {
            let b = bytes[i];
            if b.is_ascii_digit() {
                num.push(b as char);
                i += 1;
            } else if b == b',' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                i += 1;
            } else {
                break;
            }
        }
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            num.push('.');
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                num.push(bytes[i] as char);
                i += 1;
            }
        }
        last = Some(num);
    }
    last
}
