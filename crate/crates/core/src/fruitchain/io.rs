//! Chain dumps: JSON-lines, one snail block per line in height order. Each
//! line is the block's JSON object with fields in declaration order (the
//! same order as the canonical byte encoding).

use std::io::{BufRead, Write};

use crate::types::SnailBlock;

#[derive(Debug, thiserror::Error)]
pub enum ChainIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

pub fn dump_chain<W: Write>(blocks: &[SnailBlock], mut out: W) -> Result<(), ChainIoError> {
    for b in blocks {
        serde_json::to_writer(&mut out, b)
            .map_err(|e| ChainIoError::Parse { line: b.number as usize + 1, source: e })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_chain<R: BufRead>(input: R) -> Result<Vec<SnailBlock>, ChainIoError> {
    let mut blocks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let b = serde_json::from_str(&line).map_err(|e| ChainIoError::Parse { line: i + 1, source: e })?;
        blocks.push(b);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut b = SnailBlock::genesis();
        let g = b.clone();
        b.number = 1;
        b.parent_hash = g.hash;
        let mut buf = Vec::new();
        dump_chain(&[g.clone(), b.clone()], &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), 2);
        assert_eq!(load_chain(&buf[..]).unwrap(), vec![g, b]);
        assert!(matches!(load_chain(&b"{nope"[..]), Err(ChainIoError::Parse { line: 1, .. })));
    }
}
