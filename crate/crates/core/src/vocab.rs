//! Character vocabulary shared by the generator, the recognizer head, and
//! evaluation: A–Z, space, and a trailing "empty slot" class that pads words
//! out to the M character positions.

/// Total class count V; the last index is the empty-slot class.
pub const VOCAB_SIZE: usize = 28;
/// Index of the empty-slot (no character) class, always V−1.
pub const EMPTY_CLASS: usize = VOCAB_SIZE - 1;
const SPACE_CLASS: usize = 26;

/// Class index for a character, if it is in the vocabulary. Letters are
/// folded to uppercase.
pub fn char_to_index(c: char) -> Option<usize> {
    match c {
        'A'..='Z' => Some(c as usize - 'A' as usize),
        'a'..='z' => Some(c as usize - 'a' as usize),
        ' ' => Some(SPACE_CLASS),
        _ => None,
    }
}

/// The character for a class index; empty-slot and out-of-range give None.
pub fn index_to_char(i: usize) -> Option<char> {
    match i {
        0..=25 => Some((b'A' + i as u8) as char),
        SPACE_CLASS => Some(' '),
        _ => None,
    }
}

/// Can every character of `text` be encoded?
pub fn encodable(text: &str) -> bool {
    text.chars().all(|c| char_to_index(c).is_some())
}

/// Class indices for a transcription, padded with the empty class to `m`
/// slots. Unencodable characters also map to the empty class (callers mark
/// such labels dont_care upstream).
pub fn encode_padded(text: &str, m: usize) -> Vec<usize> {
    let mut out = vec![EMPTY_CLASS; m];
    for (k, c) in text.chars().take(m).enumerate() {
        out[k] = char_to_index(c).unwrap_or(EMPTY_CLASS);
    }
    out
}

/// Decode class indices into a string, stopping at the first empty slot.
pub fn decode(indices: &[usize]) -> String {
    indices
        .iter()
        .take_while(|&&i| i != EMPTY_CLASS)
        .filter_map(|&i| index_to_char(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_letters() {
        for c in 'A'..='Z' {
            assert_eq!(index_to_char(char_to_index(c).unwrap()), Some(c));
        }
        assert_eq!(char_to_index('a'), char_to_index('A'));
        assert_eq!(char_to_index('!'), None);
    }

    #[test]
    fn padding_and_decoding() {
        let enc = encode_padded("MAP", 6);
        assert_eq!(enc, vec![12, 0, 15, EMPTY_CLASS, EMPTY_CLASS, EMPTY_CLASS]);
        assert_eq!(decode(&enc), "MAP");
        // Characters after an empty slot are unreachable by decode.
        let mut gappy = enc.clone();
        gappy[4] = 1;
        assert_eq!(decode(&gappy), "MAP");
    }

    #[test]
    fn encodable_checks() {
        assert!(encodable("RIVER THAMES"));
        assert!(!encodable("A1"));
    }
}
