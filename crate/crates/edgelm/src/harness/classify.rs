//! Decision classification: map a raw model response to {0, 1, 2}.

/// Scan for the first standalone '0' or '1' — a digit with no adjacent
/// ASCII alphanumerics, so "Option 0" counts but "10" and "50/50" do not —
/// and return it. Anything without such a token is a refusal (2).
///
/// Total and deterministic; the labeled fixture set under tests/fixtures
/// pins the behavior on verbose and punctuation-wrapped responses.
pub fn classify(raw_response: &str) -> u8 {
    let bytes = raw_response.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'0' || b == b'1' {
            let prev_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
            let next_ok = i + 1 == bytes.len() || !bytes[i + 1].is_ascii_alphanumeric();
            if prev_ok && next_ok {
                return b - b'0';
            }
        }
    }
    2
}
