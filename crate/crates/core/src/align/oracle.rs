//! Exhaustive LCS length, used to cross-check the dynamic program.

use thiserror::Error;

use crate::phoneme::TokenSequence;

pub const ORACLE_MAX_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("oracle limited to sequences of {ORACLE_MAX_LEN} tokens, got {reference} and {dysfluent}")]
pub struct OracleError {
    pub reference: usize,
    pub dysfluent: usize,
}

/// Tries every subset of the reference and keeps the longest one that is a
/// subsequence of the dysfluent sequence.
pub fn lcs_bruteforce_oracle(reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<usize, OracleError> {
    if reference.len() > ORACLE_MAX_LEN || dysfluent.len() > ORACLE_MAX_LEN {
        return Err(OracleError { reference: reference.len(), dysfluent: dysfluent.len() });
    }
    let r = reference.tokens();
    let d = dysfluent.tokens();
    let mut best = 0;
    for mask in 0u32..(1 << r.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let mut cursor = 0;
        let mut ok = true;
        for (i, tok) in r.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            match d[cursor..].iter().position(|t| t == tok) {
                Some(p) => cursor += p + 1,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            best = size;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::Level;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(lcs_bruteforce_oracle(&seq("P EH N"), &seq("P K EH N N")).unwrap(), 3);
        let x = seq("AH P EH N AA N");
        assert_eq!(lcs_bruteforce_oracle(&x, &x).unwrap(), 6);
        assert_eq!(lcs_bruteforce_oracle(&seq("P EH N"), &seq("S AO M")).unwrap(), 0);
        let long = seq("P P P P P P P P P P P P P");
        assert!(lcs_bruteforce_oracle(&long, &x).is_err());
    }
}
