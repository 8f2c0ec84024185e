use std::io::{self, Write};

use thiserror::Error;

use super::{encode_frame, EncodeError, GooseFrame};
use crate::time::SimTime;

const PCAP_MAGIC_MICROS: u32 = 0xA1B2_C3D4;
const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65_535;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("record at {at} precedes the previous record at {previous}")]
    NonMonotonic { at: SimTime, previous: SimTime },
}

/// Classic libpcap writer: little-endian, microsecond timestamps, Ethernet link type.
/// Simulation time is written as time since the Unix epoch.
pub struct PcapWriter<W> {
    inner: W,
    last: Option<SimTime>,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        let mut header = [0u8; 24];
        header[0..4].copy_from_slice(&PCAP_MAGIC_MICROS.to_le_bytes());
        header[4..6].copy_from_slice(&2u16.to_le_bytes());
        header[6..8].copy_from_slice(&4u16.to_le_bytes());
        // thiszone and sigfigs stay zero
        header[16..20].copy_from_slice(&SNAPLEN.to_le_bytes());
        header[20..24].copy_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        inner.write_all(&header)?;
        Ok(PcapWriter { inner, last: None })
    }

    pub fn push(&mut self, at: SimTime, data: &[u8]) -> Result<(), PcapError> {
        if let Some(previous) = self.last {
            if at < previous {
                return Err(PcapError::NonMonotonic { at, previous });
            }
        }
        self.last = Some(at);
        let us = at.as_micros();
        let mut record = [0u8; 16];
        record[0..4].copy_from_slice(&((us / 1_000_000) as u32).to_le_bytes());
        record[4..8].copy_from_slice(&((us % 1_000_000) as u32).to_le_bytes());
        record[8..12].copy_from_slice(&(data.len().min(SNAPLEN as usize) as u32).to_le_bytes());
        record[12..16].copy_from_slice(&(data.len() as u32).to_le_bytes());
        self.inner.write_all(&record)?;
        self.inner.write_all(&data[..data.len().min(SNAPLEN as usize)])?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Encodes each frame and wraps them in a pcap capture.
pub fn frames_to_pcap(frames: &[(SimTime, GooseFrame)]) -> Result<Vec<u8>, PcapError> {
    let mut writer = PcapWriter::new(Vec::new())?;
    for (at, frame) in frames {
        writer.push(*at, &encode_frame(frame)?)?;
    }
    Ok(writer.into_inner())
}
