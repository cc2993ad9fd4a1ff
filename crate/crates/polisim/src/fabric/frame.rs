//! Length-prefixed frames: a 32-bit big-endian byte count followed by that
//! many bytes of UTF-8 JSON. The length prefix is capped at 16 MiB; an
//! oversize prefix is a protocol error, not an allocation request.

use std::io::{Read, Write};

pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame length {length} exceeds the {MAX_FRAME_LEN}-byte limit")]
    Oversize { length: u32 },
    #[error("connection closed mid-frame")]
    Truncated,
}

/// Writes one frame. Fails without writing anything if `body` exceeds the
/// frame limit.
pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), FrameError> {
    let length = u32::try_from(body.len())
        .ok()
        .filter(|&n| n <= MAX_FRAME_LEN)
        .ok_or(FrameError::Oversize {
            length: body.len().min(u32::MAX as usize) as u32,
        })?;
    w.write_all(&length.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame, blocking. `Ok(None)` is a clean close: end of stream
/// exactly on a frame boundary. End of stream anywhere else is
/// [`FrameError::Truncated`].
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, FrameError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < prefix.len() {
        match r.read(&mut prefix[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(FrameError::Truncated),
            n => got += n,
        }
    }
    let length = u32::from_be_bytes(prefix);
    if length > MAX_FRAME_LEN {
        return Err(FrameError::Oversize { length });
    }
    let mut body = vec![0u8; length as usize];
    let mut filled = 0;
    while filled < body.len() {
        match r.read(&mut body[filled..])? {
            0 => return Err(FrameError::Truncated),
            n => filled += n,
        }
    }
    Ok(Some(body))
}

/// Incremental decoder for readers that cannot block per frame (e.g. a
/// socket read loop with a timeout): feed bytes in as they arrive, pop
/// complete frames out. Partial frames stay buffered across calls.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Pops the next complete frame, or `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, FrameError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let length = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]);
        if length > MAX_FRAME_LEN {
            return Err(FrameError::Oversize { length });
        }
        let end = 4 + length as usize;
        if self.buf.len() < end {
            return Ok(None);
        }
        let body = self.buf[4..end].to_vec();
        self.buf.drain(..end);
        Ok(Some(body))
    }

    /// Bytes buffered but not yet returned as frames.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn encode(body: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        write_frame(&mut out, body).unwrap();
        out
    }

    #[test]
    fn round_trip_single_frame() {
        let body = br#"{"type":"ping"}"#;
        let wire = encode(body);
        assert_eq!(&wire[..4], &(body.len() as u32).to_be_bytes());
        let mut cursor = Cursor::new(wire);
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), body);
        assert!(read_frame(&mut cursor).unwrap().is_none());
    }

    #[test]
    fn several_frames_back_to_back() {
        let bodies: [&[u8]; 3] = [b"{}", br#"{"a":1}"#, b"{\"b\":[1,2,3]}"];
        let mut wire = Vec::new();
        for b in bodies {
            wire.extend_from_slice(&encode(b));
        }
        let mut cursor = Cursor::new(wire);
        for b in bodies {
            assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), b);
        }
        assert!(read_frame(&mut cursor).unwrap().is_none());
    }

    #[test]
    fn empty_body_frame_is_legal_at_this_layer() {
        let mut cursor = Cursor::new(encode(b""));
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), b"");
    }

    #[test]
    fn eof_mid_prefix_or_mid_body_is_truncation() {
        let wire = encode(br#"{"type":"ping"}"#);
        for cut in 1..wire.len() {
            let mut cursor = Cursor::new(&wire[..cut]);
            assert!(
                matches!(read_frame(&mut cursor), Err(FrameError::Truncated)),
                "cut at {cut} not reported as truncation"
            );
        }
    }

    #[test]
    fn oversize_prefix_is_rejected_without_reading_body() {
        let mut wire = (MAX_FRAME_LEN + 1).to_be_bytes().to_vec();
        wire.extend_from_slice(b"xx");
        let mut cursor = Cursor::new(wire);
        assert!(matches!(
            read_frame(&mut cursor),
            Err(FrameError::Oversize { .. })
        ));
    }

    #[test]
    fn write_rejects_oversize_body() {
        let body = vec![b' '; MAX_FRAME_LEN as usize + 1];
        let mut out = Vec::new();
        assert!(matches!(
            write_frame(&mut out, &body),
            Err(FrameError::Oversize { .. })
        ));
        assert!(out.is_empty(), "nothing written on failure");
    }

    #[test]
    fn decoder_handles_byte_at_a_time_arrival() {
        let bodies: [&[u8]; 2] = [br#"{"type":"ping"}"#, br#"{"type":"pong"}"#];
        let mut wire = Vec::new();
        for b in bodies {
            wire.extend_from_slice(&encode(b));
        }
        let mut decoder = FrameDecoder::new();
        let mut seen = Vec::new();
        for byte in wire {
            decoder.extend(&[byte]);
            while let Some(frame) = decoder.next_frame().unwrap() {
                seen.push(frame);
            }
        }
        assert_eq!(seen, bodies.map(|b| b.to_vec()).to_vec());
        assert_eq!(decoder.buffered(), 0);
    }

    #[test]
    fn decoder_handles_split_and_merged_chunks() {
        let wire = [encode(b"{\"n\":1}"), encode(b"{\"n\":22}")].concat();
        let mut decoder = FrameDecoder::new();
        decoder.extend(&wire[..5]);
        assert!(decoder.next_frame().unwrap().is_none());
        decoder.extend(&wire[5..]);
        assert_eq!(decoder.next_frame().unwrap().unwrap(), b"{\"n\":1}");
        assert_eq!(decoder.next_frame().unwrap().unwrap(), b"{\"n\":22}");
        assert!(decoder.next_frame().unwrap().is_none());
    }

    #[test]
    fn decoder_rejects_oversize_prefix() {
        let mut decoder = FrameDecoder::new();
        decoder.extend(&(MAX_FRAME_LEN + 7).to_be_bytes());
        assert!(matches!(
            decoder.next_frame(),
            Err(FrameError::Oversize { .. })
        ));
    }
}
